"""Quantized DNN training with per-layer dynamic fixed-point precision.

Layers train on stochastically rounded fixed-point shadow weights while a
float master copy receives the SGD updates. Every batch, each layer's format
can be pushed down to the lowest precision whose information loss (KL
divergence of the weight histogram) stays below tolerance, then pushed back
up by a gradient-diversity headroom heuristic, so word lengths rise and fall
per layer over the course of training. An analytical MADD cost model reports
the resulting speedup, memory-footprint, and model-size ratios versus a
32-bit baseline.
"""

from .fixed_point import (FixedPointFormat, NonFiniteValueError,
                          QuantizedTensor, quantization_step, quantize_tensor,
                          representable_range, stochastic_round)
from .stats import (GradientHistory, Histogram, empirical_distribution,
                    gradient_diversity, kl_divergence, log_gradient_diversity)
from .switching import (LayerQuantState, QuantizationMapping, Strategy,
                        adapt_lookback, adapt_resolution, adapt_strategy,
                        init_mapping, precision_switch, push_down, push_up)
from .nn import (LayerSpec, Network, backward, build_network, conv2d, dense,
                 flatten, forward, maxpool, regularized_loss, relu, sgd_step,
                 tnvs_init)
from .train import (MetricsEvent, TrainerConfig, TrainingDivergedError,
                    TrainResult, baseline_config, evaluate, train)
from .checkpoint import Checkpoint, CheckpointError, checkpoint_load, checkpoint_save
from .perf import (LayerCostProfile, WordlengthTimeline, layer_madds,
                   memory_footprint_ratio, model_size_ratio, network_profiles,
                   speedup, timeline_from_metrics, training_cost)
from .datasets import (LabeledDataset, generate_blobs, generate_digits,
                       load_csv, load_idx, save_idx)

__version__ = "0.1.0"
