import os
from dotenv import load_dotenv

# Load environment variables dari file .env
load_dotenv()

# ==========================================
# LOGGING CONFIG
# ==========================================
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
LOG_TO_FILE = os.getenv('LOG_TO_FILE', 'False').lower() == 'true'
LOG_FILE = os.getenv('LOG_FILE', 'densityfit.log')
LOG_MAX_SIZE = int(os.getenv('LOG_MAX_SIZE', '10485760'))
LOG_BACKUP_COUNT = int(os.getenv('LOG_BACKUP_COUNT', '5'))
LOG_FORMAT = os.getenv('LOG_FORMAT', '%(asctime)s | %(levelname)-8s | %(message)s')
LOG_DATE_FORMAT = os.getenv('LOG_DATE_FORMAT', '%Y-%m-%d %H:%M:%S')

# ==========================================
# THROUGHPUT CONFIG
# ==========================================
# Rays per render chunk and thread workers. Partial gradients are reduced in
# chunk order, so neither setting changes any output bit.
RENDER_CHUNK_SIZE = int(os.getenv('RENDER_CHUNK_SIZE', '4096'))
RENDER_WORKERS = int(os.getenv('RENDER_WORKERS', '1'))
SHOW_PROGRESS = os.getenv('SHOW_PROGRESS', 'True').lower() == 'true'

# ==========================================
# GRID DEFAULTS
# ==========================================
GRID_NX = 256
GRID_NY = 256
GRID_NZ = 64
VOXEL_SIZE = 1.0

# Fraction of the smallest voxel edge used as ray-march step
STEP_FRACTION = 0.5

# Street-view eye level above the ground
CAMERA_HEIGHT = 2.0

# ==========================================
# PANORAMA & CUTOUT DEFAULTS
# ==========================================
PANO_WIDTH = 256
PANO_HEIGHT = 128
CUTOUT_FOV = 90.0
CUTOUT_SIZE = 256
CUTOUT_HEADINGS = (0.0, 90.0, 180.0, 270.0)

# ==========================================
# LOSS DEFAULTS
# ==========================================
HEIGHT_EPS = 1e-3          # meters, clamp before logs
SI_LAMBDA = 1.0            # 1.0 = fully scale invariant
RANK_PAIRS = 2048
RANK_MIN_DIST = 10.0       # pixels
RANK_MAX_DIST = 30.0       # pixels
RANK_TAU_REL = 0.02
STREET_ALPHA = 1.0

# ==========================================
# OPTIMIZER DEFAULTS
# ==========================================
LEARNING_RATE = 0.05
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
EPOCHS = 200
LR_DECAY = 0.1
LR_DECAY_EVERY = 100
INIT_HEIGHT = 0.1          # meters, ~sqrt(HEIGHT_EPS · typical roof height)
INIT_GAIN = 1.0
LIFT_GAIN = 4.0            # street prior: non-sky directions start 1 + gain times denser
LIFT_LEVELS = 2
MIN_LIFT_SIGMA = 1e-6
DEFAULT_SEED = 0

# ==========================================
# SCENE DEFAULTS
# ==========================================
OCCUPANCY_SIGMA = 1e3

# ==========================================
# METRIC DEFAULTS
# ==========================================
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_MIN_RANGE = 1e-6

# ==========================================
# GRADIENT CHECK DEFAULTS
# ==========================================
GRADCHECK_H_RENDER = 1e-4
GRADCHECK_H_LOSS = 1e-5
GRADCHECK_TOL = 1e-4
GRADCHECK_TOL_E2E = 1e-3
GRADCHECK_ATOL = 1e-7

# ==========================================
# VALIDATION & HELPER FUNCTIONS
# ==========================================

def default_step(voxel_size):
    """Ray-march step for a voxel size triple"""
    return STEP_FRACTION * min(voxel_size)


def validate_config():
    """Validate settings that come from the environment"""
    errors = []
    warnings = []

    if RENDER_CHUNK_SIZE < 1:
        errors.append("❌ RENDER_CHUNK_SIZE must be >= 1")

    if RENDER_WORKERS < 1 or RENDER_WORKERS > 64:
        errors.append("❌ RENDER_WORKERS must be between 1 and 64")

    if RENDER_CHUNK_SIZE > 65536:
        warnings.append("⚠️ RENDER_CHUNK_SIZE above 65536 needs several GB per chunk")

    if LOG_LEVEL not in ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']:
        warnings.append(f"⚠️ LOG_LEVEL tidak valid: {LOG_LEVEL}, default ke INFO")

    if LOG_TO_FILE and LOG_MAX_SIZE < 1024:
        warnings.append("⚠️ LOG_MAX_SIZE below 1 KB rotates on every line")

    if errors or warnings:
        print("\n" + "="*50)
        print("⚠️ KONFIGURASI:")
        print("="*50)

        for error in errors:
            print(error)

        for warning in warnings:
            print(warning)

        print("="*50 + "\n")

        if errors:
            print("🛑 Fix the environment (.env) before running.\n")
            return False

    return True


def print_config():
    """Print the active configuration"""
    print("\n" + "="*50)
    print("⚙️ DENSITYFIT CONFIGURATION")
    print("="*50)

    print(f"\n🧊 GRID:")
    print(f"  Shape: {GRID_NX}×{GRID_NY}×{GRID_NZ} @ {VOXEL_SIZE} m")
    print(f"  Step: {STEP_FRACTION} × min voxel")
    print(f"  Camera height: {CAMERA_HEIGHT} m")

    print(f"\n🌐 PANORAMA:")
    print(f"  Size: {PANO_WIDTH}×{PANO_HEIGHT}")
    print(f"  Cutouts: {CUTOUT_SIZE}² @ {CUTOUT_FOV}° headings {CUTOUT_HEADINGS}")

    print(f"\n📉 LOSSES:")
    print(f"  Alpha: {STREET_ALPHA}")
    print(f"  Pairs: {RANK_PAIRS} @ {RANK_MIN_DIST}-{RANK_MAX_DIST} px, tau {RANK_TAU_REL}")

    print(f"\n🔄 OPTIMIZER:")
    print(f"  Adam lr {LEARNING_RATE} (×{LR_DECAY} every {LR_DECAY_EVERY}), {EPOCHS} epochs")
    print(f"  Init height: {INIT_HEIGHT} m, street prior gain {LIFT_GAIN} over {LIFT_LEVELS} levels")

    print(f"\n⚡ THROUGHPUT:")
    print(f"  Chunk: {RENDER_CHUNK_SIZE} rays, workers: {RENDER_WORKERS}")

    print(f"\n📝 LOGGING:")
    print(f"  Level: {LOG_LEVEL}")
    print(f"  To File: {'✅ Enabled' if LOG_TO_FILE else '❌ Disabled'}")
    if LOG_TO_FILE:
        print(f"  File: logs/{LOG_FILE}")
        print(f"  Max Size: {LOG_MAX_SIZE / 1024 / 1024:.1f}MB")
        print(f"  Backups: {LOG_BACKUP_COUNT}")

    print("="*50 + "\n")
