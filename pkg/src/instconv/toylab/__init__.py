from .experiment import (Comparison, DivergenceError, OverfitResult, compare_heads,
                         evaluate_prediction, overfit, scene_segments)
from .net import HEADS, DepthNet, NetConfig, build_net, init_params
from .optim import AdamState, adam_step
from .scene import Scene, boundary_map, gen_scene
