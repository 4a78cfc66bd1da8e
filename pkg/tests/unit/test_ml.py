import numpy as np
import pytest

from ml.model_manager import ModelManager, get_model_manager
from ml.network import MLP, Adam, MlpConfig, gradient_check, kink_margin
from ml.training import TrainedModel, flatten_windows, locate_repeated, predict, train
from services.dataset import SampleSet
from services.exceptions import DimensionMismatchError, RepetitionFailureError

LINE_KM = 200.0


@pytest.fixture
def small_config():
    """Фикстура для маленькой сети, обучаемой за доли секунды"""
    return MlpConfig(hidden_layers=[8, 4], learning_rate=0.01, batch_size=8, epochs=5, seed=3)


@pytest.fixture
def windows():
    """Фикстура для 30 случайных окон 81×6 с метками, зависящими от среднего окна"""
    rng = np.random.default_rng(11)
    X = rng.normal(scale=0.2, size=(30, 81, 6))
    y = LINE_KM * np.clip(0.5 + X.mean(axis=(1, 2)) * 5.0, 0.05, 0.95)
    return X, y


@pytest.fixture
def model_manager():
    """Фикстура для менеджера моделей с пустым кэшем"""
    manager = get_model_manager()
    manager.unload()
    yield manager
    manager.unload()


def _constant_model(output: float) -> TrainedModel:
    network = MLP([np.zeros((1, 486))], [np.array([output])])
    return TrainedModel(network=network, config=MlpConfig(hidden_layers=[]), line_length_km=LINE_KM)


def test_gradient_check_on_small_network():
    rng = np.random.default_rng(1)
    model = MLP.initialize([6, 5, 4, 1], seed=1)
    X, y = rng.normal(size=(8, 6)), rng.normal(size=8)

    assert gradient_check(model, X, y) < 1e-5


def _pin_to_kink(model: MLP, x: np.ndarray, offset: float) -> None:
    z = x.dot(model.weights[0][0]) + model.biases[0][0]
    model.biases[0][0] -= z - offset


def test_gradient_check_skips_samples_at_relu_kink():
    rng = np.random.default_rng(1)
    model = MLP.initialize([6, 5, 4, 1], seed=1)
    X, y = rng.normal(size=(8, 6)), rng.normal(size=8)
    _pin_to_kink(model, X[0], 1e-6)

    assert kink_margin(model, X)[0] < 1e-5
    assert gradient_check(model, X, y) < 1e-5


def test_gradient_check_rejects_all_samples_at_kink():
    rng = np.random.default_rng(2)
    model = MLP.initialize([6, 5, 1], seed=2)
    X, y = rng.normal(size=(1, 6)), rng.normal(size=1)
    _pin_to_kink(model, X[0], 0.0)

    with pytest.raises(ValueError):
        gradient_check(model, X, y)


def test_mlp_rejects_wrong_input_size():
    model = MLP.initialize([6, 3, 1])

    with pytest.raises(DimensionMismatchError):
        model.forward(np.zeros((2, 5)))


def test_mlp_rejects_inconsistent_layers():
    with pytest.raises(DimensionMismatchError):
        MLP([np.zeros((3, 6)), np.zeros((1, 4))], [np.zeros(3), np.zeros(1)])


def test_config_layer_sizes():
    assert MlpConfig().layer_sizes == [486, 256, 128, 64, 32, 16, 1]


def test_adam_moves_against_gradient():
    parameter = np.array([1.0, -1.0])
    optimizer = Adam(learning_rate=0.1)

    optimizer.step([parameter], [np.array([2.0, -3.0])])

    assert np.allclose(parameter, [0.9, -0.9])


def test_flatten_windows_rejects_short_window():
    with pytest.raises(DimensionMismatchError):
        flatten_windows(np.zeros((80, 6)))


def test_training_is_deterministic(small_config, windows):
    X, y = windows
    train_set, val_set = SampleSet(X[:24], y[:24]), SampleSet(X[24:], y[24:])

    first = train(train_set, val_set, small_config, LINE_KM)
    second = train(train_set, val_set, small_config, LINE_KM)

    for a, b in zip(first.network.parameters, second.network.parameters):
        assert np.array_equal(a, b)
    assert len(first.history) == small_config.epochs


def test_training_reduces_loss(small_config, windows):
    X, y = windows
    config = small_config.model_copy(update={"epochs": 60})

    model = train(SampleSet(X[:24], y[:24]), SampleSet(X[24:], y[24:]), config, LINE_KM)

    assert model.history[-1].train_loss < model.history[0].train_loss


@pytest.mark.parametrize("output, expected", [(2.0, LINE_KM), (-1.0, 0.0), (0.25, 50.0)])
def test_predict_is_clamped_to_line(output, expected):
    assert predict(_constant_model(output), np.zeros((81, 6))) == pytest.approx(expected)


def test_predict_batch():
    km = predict(_constant_model(0.5), np.zeros((3, 81, 6)))

    assert km.shape == (3,)
    assert np.allclose(km, 100.0)


def test_locate_repeated_uses_consecutive_seeds(small_config, windows):
    X, y = windows

    result = locate_repeated(X, y, X[0], small_config, LINE_KM, n=3)

    assert result.seeds == [3, 4, 5]
    assert result.predictions.shape == (3,)
    assert np.all((result.predictions >= 0.0) & (result.predictions <= LINE_KM))
    assert result.std_km >= 0.0


def test_locate_repeated_is_reproducible(small_config, windows):
    X, y = windows

    first = locate_repeated(X, y, X[0], small_config, LINE_KM, n=2)
    second = locate_repeated(X, y, X[0], small_config, LINE_KM, n=2)

    assert np.array_equal(first.predictions, second.predictions)


def test_locate_repeated_requires_repetitions(small_config, windows):
    X, y = windows

    with pytest.raises(RepetitionFailureError):
        locate_repeated(X, y, X[0], small_config, LINE_KM, n=0)


def test_model_manager_is_singleton():
    assert ModelManager() is get_model_manager()


def test_model_manager_save_and_load(tmp_path, model_manager, small_config, windows):
    X, y = windows
    model = train(SampleSet(X[:24], y[:24]), SampleSet(X[24:], y[24:]), small_config, LINE_KM,
                  voltage_base=4e5, current_base=2e3)
    path = model_manager.save(model, tmp_path / "model.flmp")
    model_manager.unload()

    loaded = model_manager.load(path)

    assert loaded is not model
    assert loaded.network.layer_sizes == [486, 8, 4, 1]
    assert loaded.config == small_config
    assert loaded.current_base == 2e3
    assert len(loaded.history) == small_config.epochs
    for a, b in zip(loaded.network.parameters, model.network.parameters):
        assert np.allclose(a, b, atol=1e-6)
    assert model_manager.load(path) is loaded


def test_model_manager_rejects_foreign_file(tmp_path, model_manager):
    path = tmp_path / "model.flmp"
    path.write_bytes(b"XXXX" + bytes(16))

    with pytest.raises(DimensionMismatchError):
        model_manager.load(path)


def test_training_log_csv(tmp_path, small_config, windows):
    X, y = windows
    model = train(SampleSet(X[:24], y[:24]), SampleSet(X[24:], y[24:]), small_config, LINE_KM)

    path = ModelManager.write_training_log(model, tmp_path / "training.csv")

    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "epoch,train_loss,val_loss"
    assert len(lines) == small_config.epochs + 1
