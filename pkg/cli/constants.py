from pathlib import Path
from typing import List, Tuple

DEFAULT_SEED = 0
DEFAULT_FRAMES = 14
DEFAULT_LATENT_CHANNELS = 4
DEFAULT_BASE_WIDTH = 32
DEFAULT_NUM_HEADS = 4
DEFAULT_LATENT_DOWNSCALE = 4
DEFAULT_REF_EMBED_DIM = 64
DEFAULT_RESOLUTIONS = "32,64"
DEFAULT_ADAPTER_RANK = 4
DEFAULT_STEPS = 30
DEFAULT_SDEDIT_STRENGTH = 0.6
DEFAULT_TRAIN_ITERATIONS = 200
DEFAULT_LEARNING_RATE = 8e-5
DEFAULT_BATCH_SIZE = 2
DEFAULT_PERCEPTUAL_WEIGHT = 1.0
DEFAULT_GAN_WEIGHT = 0.025
DEFAULT_STAGE3_SAMPLE_STEPS = 8
DEFAULT_TRAIN_TIMESTEPS = 1000
DEFAULT_DATA_COUNT = 16
DEFAULT_DATA_SIZE = 64
DEFAULT_CHECKPOINT_DIR = "checkpoints"
DEFAULT_DB_PATH = "data/runs.db"
DEFAULT_LOG_PATH = "logs/damvsr.log"

ENV_PREFIX = "DAMVSR_"
FRAME_PATTERN = "{:06d}.png"
FLOW_SUFFIX = ".flo"
FLOW_MAGIC = b"FLW1"
ENHANCER_CHOICES = ("identity", "oracle", "net", "external:<command>")

# key, kind, default, description
CONFIG_FIELDS: List[Tuple[str, str, str, str]] = [
    ("SEED", "int", str(DEFAULT_SEED), "root seed for every random stream"),
    ("FRAMES", "int", str(DEFAULT_FRAMES), "clip length k"),
    ("LATENT_CHANNELS", "int", str(DEFAULT_LATENT_CHANNELS), "VAE latent channels"),
    ("BASE_WIDTH", "int", str(DEFAULT_BASE_WIDTH), "stem width of every network"),
    ("NUM_HEADS", "int", str(DEFAULT_NUM_HEADS), "attention heads"),
    ("LATENT_DOWNSCALE", "int", str(DEFAULT_LATENT_DOWNSCALE), "VAE spatial factor f (power of two)"),
    ("REF_EMBED_DIM", "int", str(DEFAULT_REF_EMBED_DIM), "reference embedding size"),
    ("RESOLUTIONS", "ints", DEFAULT_RESOLUTIONS, "UNet level widths, comma separated"),
    ("ADAPTER_RANK", "int", str(DEFAULT_ADAPTER_RANK), "VAE decoder adapter rank (0 disables)"),
    ("STEPS", "int", str(DEFAULT_STEPS), "inference schedule length T"),
    ("SDEDIT_STRENGTH", "float", str(DEFAULT_SDEDIT_STRENGTH), "fraction of T re-noised at start"),
    ("BIDIRECTIONAL", "bool", "true", "blend forward and backward generation"),
    ("TILE_SIZE", "int", "0", "latent tile size, 0 disables tiling"),
    ("TILE_OVERLAP", "optint", "", "latent tile overlap (default 25% of tile)"),
    ("DECODE_FEATHER", "optint", "", "pixel ramp width for tiled decode (default half the overlap)"),
    ("VAE_ADAPTER", "bool", "true", "decode with the fine-tuned adapter"),
    ("FRAME_BY_FRAME", "bool", "false", "skip diffusion and enhance every frame on its own"),
    ("WORKERS", "int", "1", "threads for per-tile work"),
    ("ENHANCER", "str", "identity", "reference enhancer: identity | oracle | net | external:<command>"),
    ("BLUR_SIGMA", "range", "0.2,1.5", "degradation blur sigma range (pixels)"),
    ("DOWNSCALE_FACTOR", "int", "4", "degradation downscale factor"),
    ("NOISE_SIGMA", "range", "0,10", "degradation noise sigma range (8-bit levels)"),
    ("QUANT_LEVELS", "optint", "", "quantisation levels (empty disables)"),
    ("TRAIN_ITERATIONS", "int", str(DEFAULT_TRAIN_ITERATIONS), "optimizer steps per stage"),
    ("LEARNING_RATE", "float", str(DEFAULT_LEARNING_RATE), "AdamW learning rate"),
    ("BATCH_SIZE", "int", str(DEFAULT_BATCH_SIZE), "clips per step"),
    ("PERCEPTUAL_WEIGHT", "float", str(DEFAULT_PERCEPTUAL_WEIGHT), "stage 3 perceptual weight"),
    ("GAN_WEIGHT", "float", str(DEFAULT_GAN_WEIGHT), "stage 3 GAN weight"),
    ("STAGE3_SAMPLE_STEPS", "int", str(DEFAULT_STAGE3_SAMPLE_STEPS), "sampling steps for stage 3 decoder inputs"),
    ("TRAIN_TIMESTEPS", "int", str(DEFAULT_TRAIN_TIMESTEPS), "training schedule length"),
    ("REFERENCE_SOURCE", "str", "gt", "training reference frames: gt | lq"),
    ("DISC_LR_MULTIPLIER", "float", "2.0", "discriminator lr / generator lr"),
    ("COLLAPSE_WINDOW", "int", "50", "steps of chance-level discriminator accuracy before warning"),
    ("COLLAPSE_EPSILON", "float", "0.02", "tolerance around 0.5 for the collapse alarm"),
    ("LOG_EVERY", "int", "25", "log a loss line every N steps"),
    ("DATA_COUNT", "int", str(DEFAULT_DATA_COUNT), "toy videos to synthesize"),
    ("DATA_SIZE", "int", str(DEFAULT_DATA_SIZE), "toy frame size (pixels, square)"),
    ("DATA_FRAMES", "int", "0", "toy clip length; 0 uses FRAMES"),
    ("MOTION", "str", "random", "toy motion: static | translate | random"),
    ("CAMERA_VELOCITY", "range", "1,0", "translate motion camera velocity dx,dy"),
    ("OBJECT_VELOCITY", "range", "1,0", "translate motion object velocity dx,dy"),
    ("MAX_SPEED", "float", "2.0", "random motion speed bound (pixels/frame)"),
    ("CHECKPOINT_DIR", "str", DEFAULT_CHECKPOINT_DIR, "where train writes checkpoints"),
]

CONFIG_KEYS = [key for key, _, _, _ in CONFIG_FIELDS]
