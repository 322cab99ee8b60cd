import pytest

from hkq import bnn, evaluation

# Desk-scale setup shared by the evaluation and acceptance suites.
DESK_TRAIN_SETS = 20_000
DESK_SAMPLES = 1000
DESK_TRAIN = bnn.TrainConfig(seed=3)
DESK_EXPERIMENT = evaluation.ExperimentConfig(seed=11)


@pytest.fixture(scope="session")
def desk_data():
    return evaluation.simulate_training_data(DESK_TRAIN_SETS, DESK_SAMPLES, seed=1)


@pytest.fixture(scope="session")
def desk_trained(desk_data):
    import time

    t0 = time.perf_counter()
    model, log = bnn.train(desk_data, DESK_TRAIN)
    return model, log, time.perf_counter() - t0


@pytest.fixture(scope="session")
def desk_model(desk_trained):
    return desk_trained[0]


@pytest.fixture(scope="session")
def desk_grid():
    return evaluation.build_test_grid(DESK_EXPERIMENT)


@pytest.fixture(scope="session")
def desk_report(desk_model, desk_grid):
    return evaluation.run_experiment(DESK_EXPERIMENT, desk_model, grid=desk_grid)


def _pipeline(workdir, seed):
    """generate -> features -> train -> evaluate with --strict-determinism;
    returns the summary JSON bytes."""
    from hkq.cli import run_cli

    w = str(workdir)
    common = ["--seed", str(seed), "--strict-determinism"]
    steps = [
        ["generate", "--training", "300", "--n", "400", "--out", f"{w}/train"],
        ["features", "--input", f"{w}/train", "--out", f"{w}/train.csv"],
        ["train", "--features", f"{w}/train.csv", "--steps", "150", "--batch-size", "32",
         "--hidden", "8,8", "--out", f"{w}/model.bnn"],
        ["evaluate", "--model", f"{w}/model.bnn", "--n-alpha", "3", "--n-k", "3", "--realizations", "3",
         "--samples", "400", "--n-draws", "5", "--snr", "none", "40", "20", "--out", f"{w}/eval"],
    ]
    for argv in steps:
        assert run_cli(argv + common) == 0, argv
    return (workdir / "eval" / "summary.json").read_bytes()


@pytest.fixture
def cli_pipeline():
    return _pipeline


def pytest_terminal_summary(terminalreporter):
    import sys

    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
