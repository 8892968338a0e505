import numpy as np
import pytest

from flowad.data import WindowingConfig, sliding_windows
from flowad.detection import calibrate
from flowad.fastpath import ScoringRuntime
from flowad.model import ModelConfig
from flowad.synth import SynthConfig, synth_generate
from flowad.training import TrainConfig, train


@pytest.fixture(scope="session")
def toy_cfg():
    # small enough for finite differences, large enough to exercise
    # every parameter group
    return ModelConfig(
        n_signals=3, window_len=8, hidden_size=5, latent_size=6,
        flow_layers=2, made_hidden=7, disc_widths=(6,),
    )


@pytest.fixture(scope="session")
def trained_small():
    """One real but small training run shared by scoring-level tests."""
    windowing = WindowingConfig(window_len=100, stride=40)
    model_cfg = ModelConfig(n_signals=6, window_len=100)
    synth = SynthConfig(num_normal=40, num_anomalous=0, n_frames=220,
                        n_signals=6, seed=11)
    records = synth_generate(synth)
    tcfg = TrainConfig(epochs=6, seed=3)
    result = train(records, model_cfg, tcfg, windowing)
    runtime = ScoringRuntime(model_cfg, result.generator.arrays, result.norm_stats)
    windows = [w for r in records for w in sliding_windows(r, windowing)]
    calib = calibrate(runtime, windows)
    test_records = synth_generate(
        SynthConfig(num_normal=12, num_anomalous=12, n_frames=220,
                    n_signals=6, seed=12)
    )
    return {
        "windowing": windowing,
        "model_cfg": model_cfg,
        "train_cfg": tcfg,
        "train_records": records,
        "test_records": test_records,
        "result": result,
        "runtime": runtime,
        "calib": calib,
    }


def rng_for(test_seed: int) -> np.random.Generator:
    return np.random.default_rng(test_seed)
