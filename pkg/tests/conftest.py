import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def demo_manifest(tmp_path_factory):
    """4 demo faces x 2 kernels at 128x128, lazy blurred images."""
    from semdeblur.blur import DegradationConfig, generate_kernel_bank
    from semdeblur.dataset import synthesize_dataset
    from semdeblur.facegen import write_demo_dataset

    root = tmp_path_factory.mktemp("demo128")
    dirs = write_demo_dataset(root / "faces", num_identities=2, per_identity=2, seed=7)
    bank = generate_kernel_bank(2, [13, 15], seed=11)
    cfg = DegradationConfig(noise_sigma=0.01, rng_seed=5)
    return synthesize_dataset(dirs["clear"], dirs["labels"], bank, cfg,
                              root / "data", seed=5)


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory):
    """4 tiny 32x32 faces x 1 kernel, for fast training-loop tests."""
    from semdeblur.blur import DegradationConfig, generate_kernel_bank
    from semdeblur.dataset import synthesize_dataset
    from semdeblur.facegen import write_demo_dataset

    root = tmp_path_factory.mktemp("demo32")
    dirs = write_demo_dataset(root / "faces", num_identities=2, per_identity=2,
                              seed=3, size=32)
    bank = generate_kernel_bank(1, [13], seed=4)
    cfg = DegradationConfig(noise_sigma=0.01, rng_seed=2)
    return synthesize_dataset(dirs["clear"], dirs["labels"], bank, cfg,
                              root / "data", seed=2, out_size=32)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
