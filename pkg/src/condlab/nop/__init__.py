from .layers import ACTIVATIONS, FourierBasis, HiddenLayer, PointwiseMLP
from .model import (
    Batch,
    FullNOSpec,
    LayerSpec,
    ModelConfig,
    NOModel,
    build_specs,
    fullno_forward,
    grad,
    identity_model,
    loss_and_grad,
    relative_l1_loss,
    relative_l1_per_record,
)
from .train import (
    AdamState,
    ArrayDataset,
    EvalStats,
    History,
    PlateauScheduler,
    TrainConfig,
    adam_step,
    evaluate,
    plateau_scheduler,
    predict_dataset,
    train,
)
