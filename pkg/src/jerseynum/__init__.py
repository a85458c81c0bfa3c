"""Jersey-number recognition toolkit: synthetic data, torso crops, small CNNs.

The pieces, in pipeline order:

* :mod:`jerseynum.imaging` - the RGB image type, PNG I/O, resize/paste/concat
* :mod:`jerseynum.augment` - seeded augmentation kernels and policies
* :mod:`jerseynum.synth` - Simple2D and Complex2D dataset generators
* :mod:`jerseynum.localization` - keypoints to expanded torso crops
* :mod:`jerseynum.datasets` - manifests, label encodings, balancing, splits
* :mod:`jerseynum.nn` - numpy autodiff engine and the small CNN
* :mod:`jerseynum.train` - curriculum training with dynamic augmentation
* :mod:`jerseynum.infer` - per-head prediction, ensemble, evaluation
* :mod:`jerseynum.cli` - the ``jerseynum`` command
"""

from .augment import AugPolicy, AugSeed
from .imaging import Color, Image, load_png, save_png
from .datasets import DatasetManifest, read_manifest, write_manifest
from .nn import CnnConfig, SmallCnn
from .synth import GenConfig, Palette, gen_complex2d, gen_simple2d
from .train import StageConfig, run_curriculum
from .infer import ensemble, evaluate, predict_multiclass, predict_multilabel

__version__ = "0.1.0"

__all__ = [
    "AugPolicy",
    "AugSeed",
    "CnnConfig",
    "Color",
    "DatasetManifest",
    "GenConfig",
    "Image",
    "Palette",
    "SmallCnn",
    "StageConfig",
    "ensemble",
    "evaluate",
    "gen_complex2d",
    "gen_simple2d",
    "load_png",
    "predict_multiclass",
    "predict_multilabel",
    "read_manifest",
    "run_curriculum",
    "save_png",
    "write_manifest",
    "__version__",
]
