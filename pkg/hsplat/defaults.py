"""Shared engine defaults."""

# Rasterizer conventions inherited from the reference 3D-GS rasterizer.
TILE_SIZE = 16
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
TRANSMITTANCE_MIN = 1e-4
LOW_PASS_DILATION = 0.3
NEAR_PLANE = 0.2
FRUSTUM_SLACK = 1.3

# Densification thresholds.
DEFAULT_TAU_P = 0.0002
ABS_TAU_P_CHOICES = (0.0004, 0.0008)
DEFAULT_TAU_S = 0.01
DEFAULT_SPLIT_COUNT = 2
DEFAULT_SPLIT_SCALE_DIVISOR = 1.6
DEFAULT_PRUNE_OPACITY = 0.005
DEFAULT_DENSIFY_INTERVAL = 100
DEFAULT_DENSIFY_FROM = 500
DEFAULT_DENSIFY_UNTIL = 15000
DEFAULT_OPACITY_RESET_INTERVAL = 3000
DEFAULT_MAX_SCREEN_FRACTION = 0.2
DEFAULT_MAX_WORLD_FRACTION = 0.1
OPACITY_RESET_VALUE = 0.01

# Optimisation schedule.
DEFAULT_ITERATIONS = 30000
DEFAULT_LAMBDA_DSSIM = 0.2
POSITION_LR_INIT = 1.6e-4
POSITION_LR_FINAL = 1.6e-6
POSITION_LR_DELAY_MULT = 0.01
SCALING_LR = 5e-3
ROTATION_LR = 1e-3
OPACITY_LR = 5e-2
FEATURE_LR = 2.5e-3
FEATURE_REST_LR_DIVISOR = 20.0
ADAM_EPS = 1e-15

# Run bookkeeping.
DEFAULT_LOG_INTERVAL = 100
DEFAULT_SEED = 0
DEFAULT_THREADS = 1
DEFAULT_SH_DEGREE = 0
MAX_SH_DEGREE = 3
DEFAULT_IMAGE_CACHE_SIZE = 64

# SSIM window.
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
