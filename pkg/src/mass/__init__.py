"""Information-theoretic suppression of sensitive attributes in data.

A learned stochastic map x -> x' keeps I(X'; S) under a budget m for each
sensitive attribute, keeps I(X'; U) above a floor n for each annotated
useful attribute, and otherwise maximises a contrastive lower bound on
I(X'; F) for unannotated features F.
"""
from .bounds import (ConstraintConfig, FeasibilityReport, audit_constraints, check_feasibility,
                     empirical_conditional_entropy, empirical_entropy, guessing_accuracy,
                     max_preservation_floor, objective_upper_bound, preservation_ceiling)
from .data import (AttributeSpec, Dataset, DatasetManifest, LabelValidationError, ManifestError,
                   SyntheticSpec, TabularEncoder, encode_tabular, generate_synthetic,
                   load_dataset, save_dataset)
from .estimators import (MiEstimate, MineEstimator, StatisticsNet, brute_force_mi,
                         ce_mi_estimate, frozen_classifier_error, infonce_batch, infonce_loss,
                         infonce_loss_dual)
from .evaluation import (EvalConfig, MetricsReport, evaluate, eval_sensitive, eval_useful,
                         infonce_mi_probe, nag, report, retrain_attacker)
from .joint import DiscreteJoint, random_channel
from .losses import l2_reconstruction, preservation_penalty, suppression_penalty, total_loss
from .networks import ClassifierNet, FeatureNet, TransformerNet, transform
from .scenario import ScenarioConfig, run_scenario
from .training import (VARIANTS, InfeasibleConstraintsError, NumericalFailure, TrainConfig,
                       build_variant, fit, pretrain)

__version__ = "0.1.0"
