"""Indoor 360° semantic segmentation with complementary bi-directional
feature compression and three-branch self-distillation."""

__version__ = "0.1.0"

from .pano_data import (IGNORE, FoldSplit, MaskSpec, PanoramaSample,
                        apply_black_mask, load_dataset, make_fold_split,
                        synth_panorama)
from .equirect_ops import PadSpec, circular_pad, upsample, window_avg_pool
from .encoder import EncoderConfig, PyramidEncoder, count_parameters
from .bicompress import (BiCompress, DirectionalSequence, MixMlp, PpcCompress,
                         align_concat, ppc_levels)
from .ensemble_decoder import (BRANCHES, EB, HDB, VDB, AConvDecoder,
                               BiCompressNet, BranchHead, BranchOutputs,
                               ensemble_sum)
from .objective import (LossReport, ObjectiveConfig, ScheduleConfig,
                        class_weights, loss_ce, loss_kl, loss_l2, poly_lr,
                        total_loss)
from .eval_metrics import ConfusionMatrix, aggregate_folds, miou_macc
from .train import RunConfig, build_model, load_checkpoint, predict, \
    save_checkpoint, train
