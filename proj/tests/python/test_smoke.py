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
import math

import numpy as np
import pytest

import gradlab


def test_ssim_identity_and_contrast():
    rng = np.random.default_rng(0)
    a = rng.random((32, 32))
    assert gradlab.ssim(a, a) == pytest.approx(1.0)
    assert gradlab.ssim(a, 1.0 - a) < 0.5
    assert gradlab.mse(a, a) == 0.0


def test_accountant_round_trip():
    sigma = gradlab.calibrate_sigma(8.0, 1e-3, 0.125, 160)
    eps, alpha = gradlab.epsilon(sigma, 0.125, 160, 1e-3)
    assert eps == pytest.approx(8.0, rel=0.01)
    assert alpha >= 2
    assert gradlab.rdp_gaussian(1.0, 1.0, 2) == pytest.approx(1.0)


def test_group_privacy():
    eps, delta = gradlab.group_privacy(math.log(2.0), 1e-5, 2)
    assert eps == pytest.approx(2.0 * math.log(2.0))
    assert delta == pytest.approx(3e-5)


def test_synthetic_digits():
    images, labels = gradlab.synthetic_digits(12, 3)
    assert images.shape == (12, 1, 32, 32)
    assert labels == [i % 10 for i in range(12)]
    assert 0.0 <= images.min() and images.max() <= 1.0


def test_attack_pipeline(tmp_path):
    cfg = "\n".join(
        [
            "[experiment]",
            "seed = 1",
            "[data]",
            "samples = 2",
            "[attack]",
            "iters = 5",
            "model_seed = 0",
        ]
    )
    out = gradlab.run_attack(cfg, str(tmp_path))
    assert out["image"].shape == (1, 1, 32, 32)
    assert math.isfinite(out["loss"])
    assert (tmp_path / "trace.csv").exists()
    assert (tmp_path / "manifest.txt").exists()


def test_accountant_pipeline(tmp_path):
    cfg = "[accountant]\ntarget_eps = 8\n"
    eps = gradlab.run_accountant(cfg, str(tmp_path))
    assert eps == pytest.approx(8.0, rel=0.01)
    assert (tmp_path / "budget.csv").exists()
