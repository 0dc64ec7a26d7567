"""Style-conditioned sketch-to-image translation on a synthetic
procedural-art corpus, built on a small numpy autodiff core."""

from .config import (CorpusSpec, FmtConfig, LossWeights, ModelConfig,
                     StyleRecipe, TrainConfig, default_styles)
from .data import Dataset, extract_sketch, generate_corpus, load_png, save_png
from .errors import (ConfigError, ContractError, IoError, NumericError,
                     ShapeError, SketchStyleError, TrainingFailure)
from .layers import (AttnResBlock, DmiParams, IdnPredictor, adain,
                     attn_res_block, dmi_forward, downsample_mask, fmt,
                     idn_forward)
from .losses import DiscriminatorOutput, d_loss, g_loss, gradient_match
from .metrics import (GaussianStats, edge_l1, frechet_distance, gram_l2,
                      gram_matrix, pdar, style_classification_score)
from .models import (Discriminator, Generator, StyleBundle, StyleEncoder,
                     blend_styles, build_models, discriminate, extract_style,
                     generate, train_encoder)
from .tensor import Parameter, Tensor, backward, no_grad
from .tensorio import (load_checkpoint, load_tensor, save_checkpoint,
                       save_tensor)
from .train import RunReport, evaluate, load_models, train, train_step

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
