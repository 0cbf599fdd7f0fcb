from enum import Enum
from functools import wraps
from typing import Optional

import numpy as np
import requests

from gmm_wae.exceptions import ContractError, NotFittedException, NotTrainedException


class WAEModule:
    model: Optional["Seq2SeqModel"]  # noqa: F821
    vocab: Optional["Vocab"]  # noqa: F821
    class_names: list[str]
    train_config: "TrainConfig"  # noqa: F821
    optimizer: Optional["Adam"]  # noqa: F821
    history: "TrainHistory"  # noqa: F821
    rng: np.random.Generator
    session: requests.Session


class Module:
    def __init__(self, wae: WAEModule):
        self.wae = wae


class ModuleHelper:
    # Helper Functions

    @staticmethod
    def parse_enum(string: str, enum_type: type[Enum]):
        filtered = list(filter(lambda x: x.value == string, list(enum_type)))

        if not filtered:
            choices = ", ".join(x.value for x in enum_type)
            raise ContractError(f"{string!r} is not one of: {choices}")

        return filtered[0]

    @staticmethod
    def parse_csv_floats(value: str) -> list[float]:
        try:
            return [float(part) for part in value.split(",") if part.strip()]
        except ValueError:
            raise ContractError(f"Expected comma-separated numbers, got {value!r}")

    # Decorators

    """
    Throws NotTrainedException if someone uses a method with this decorator
    before a model was trained or loaded
    """

    @staticmethod
    def trained(method):
        @wraps(method)
        def __impl(self: Module, *method_args, **method_kwargs):
            if self.wae.model is None:
                raise NotTrainedException()

            return method(self, *method_args, **method_kwargs)

        return __impl

    """
    Throws NotFittedException if a metric model is queried before `fit`
    """

    @staticmethod
    def fitted(method):
        @wraps(method)
        def __impl(self, *method_args, **method_kwargs):
            if not self.is_fitted:
                raise NotFittedException(
                    f"{type(self).__name__} must be fitted before {method.__name__}"
                )

            return method(self, *method_args, **method_kwargs)

        return __impl
