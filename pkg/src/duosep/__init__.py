"""duosep: one real-time model for enhancement and two-talker separation.

Subpackages cover the differentiation engine (autodiff), the training
objectives built on it (objectives), room/scene synthesis (scene), the
streaming separator (sepnet), the speaker-overlap detector (sod),
evaluation metrics, and the command-line harness (cli).
"""

from .audio import AudioBuffer, read_wav, write_wav
from .autodiff import Graph, Var, finite_diff_check
from .exceptions import (ConfigError, DataError, DuosepError, NumericalError,
                         ShapeError, ZeroEnergyError)
from .objectives import (EstimateSet, LossConfig, TargetSet,
                         eps_tsdr_measure, mol_loss, objective_dispatch,
                         pit_loss, reformulate_targets, sa_sdr_loss,
                         sdr_measure)

__version__ = "0.1.0"
