"""Single-stage transformer encoder for frame-level temporal action segmentation."""
from .data import (ClassVocabulary, Dataset, DatasetSplit, FeatureSequence, LabelSequence, Trial,
                   load_dataset, write_dataset, write_predictions)
from .errors import ConfigError, DataError, HRTRError, NumericFault
from .loss import FocalSpec, focal_loss, focal_loss_grad
from .metrics import (MetricsReport, aer, edit_score, evaluate, frame_metrics, levenshtein,
                      to_transcript)
from .model import (ModelConfig, backward, forward, init_params, param_count, positional_encoding,
                    predict_proba)
from .optim import OptimizerState, TrainConfig, clip_gradients, plateau_update, sgd_step, train
from .synthgen import SynthSpec, generate
from .windowing import (SmoothSpec, WindowSpec, make_inference_windows, make_training_windows,
                        reassemble, smooth)

__version__ = "0.1.0"
