# Copyright 2026 The longctx Authors
# SPDX-License-Identifier: Apache-2.0
"""Context-parallel long-context inference toolkit."""

from ._core import *  # noqa: F401,F403
from ._core import (  # noqa: F401
    LongctxError,
    RingBrokenError,
    ModelConfig,
    ToyModel,
)

__version__ = "0.1.0"
