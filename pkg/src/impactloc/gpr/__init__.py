from .kernels import (
    KERNEL_KINDS,
    KernelSpec,
    TaskCovariance,
    build_joint_kernel,
    cosine_matrix,
    input_kernel,
    kernel_eval,
)
from .model import (
    GPTrainingError,
    MultitaskGPRegressor,
    ParamLayout,
    Prediction,
    jittered_cholesky,
    lml_and_grad,
    load_model,
    save_model,
)

__all__ = [
    "KERNEL_KINDS", "KernelSpec", "TaskCovariance", "build_joint_kernel", "cosine_matrix",
    "input_kernel", "kernel_eval", "GPTrainingError", "MultitaskGPRegressor", "ParamLayout",
    "Prediction", "jittered_cholesky", "lml_and_grad", "load_model", "save_model",
]
