# Copyright 2025 The gradlab Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Gradient leakage attack lab: python surface over the C++ core."""

from ._gradlab import (
    STABLE_MODEL_SEED,
    calibrate_sigma,
    epsilon,
    group_privacy,
    mse,
    rdp_gaussian,
    run_accountant,
    run_attack,
    run_audit,
    run_train,
    ssim,
    synthetic_digits,
)

__all__ = [
    "STABLE_MODEL_SEED",
    "calibrate_sigma",
    "epsilon",
    "group_privacy",
    "mse",
    "rdp_gaussian",
    "run_accountant",
    "run_attack",
    "run_audit",
    "run_train",
    "ssim",
    "synthetic_digits",
]
