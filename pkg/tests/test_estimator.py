import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from modalalign.data import SynthConfig, gen_synthetic, labels_of
from modalalign.errors import ConfigError, DataError
from modalalign.estimator import MultimodalRegressor


def make_xy(n=24, seed=0):
    samples = gen_synthetic(SynthConfig(n_samples=n, seq_lens=(2, 3, 3),
                                        step_dims=(3, 3, 3), seed=seed))
    X = [{"text": s.text, "audio": s.audio, "vision": s.vision} for s in samples]
    return X, labels_of(samples)


def tiny_regressor(**overrides):
    base = dict(epochs=2, batch_size=8, d_t=3, d_a=3, d_v=3, d_all=4, d_proj=4, seed=0)
    base.update(overrides)
    return MultimodalRegressor(**base)


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        est = tiny_regressor(alignment_spec="V-A")
        params = est.get_params()
        assert params["alignment_spec"] == "V-A"
        est.set_params(epochs=5)
        assert est.epochs == 5

    def test_clone(self):
        est = tiny_regressor(lambda_share=2.5)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_not_fitted_error(self):
        X, _ = make_xy(4)
        with pytest.raises(NotFittedError):
            tiny_regressor().predict(X)

    def test_fit_returns_self_and_predicts(self):
        X, y = make_xy()
        est = tiny_regressor()
        assert est.fit(X, y) is est
        pred = est.predict(X)
        assert pred.shape == (len(X),)
        assert np.all(np.isfinite(pred))

    def test_score_is_r2(self):
        X, y = make_xy()
        est = tiny_regressor(epochs=3).fit(X, y)
        score = est.score(X, y)
        pred = est.predict(X)
        expected = 1 - np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2)
        assert score == pytest.approx(expected)


class TestFitBehaviour:
    def test_deterministic(self):
        X, y = make_xy()
        p1 = tiny_regressor().fit(X, y).predict(X)
        p2 = tiny_regressor().fit(X, y).predict(X)
        assert np.array_equal(p1, p2)

    def test_history_length(self):
        X, y = make_xy()
        est = tiny_regressor(epochs=4).fit(X, y)
        assert len(est.history_) == 4

    def test_accepts_sample_objects(self):
        samples = gen_synthetic(SynthConfig(n_samples=8, seq_lens=(2, 2, 2),
                                            step_dims=(3, 3, 3), seed=1))
        est = tiny_regressor().fit(samples, labels_of(samples))
        assert est.predict(samples).shape == (8,)

    def test_features_surface(self):
        X, y = make_xy()
        est = tiny_regressor(d_proj=4).fit(X, y)
        feats = est.features(X)
        assert set(feats) == {"t", "a", "v", "all"}
        assert feats["t"].shape == (len(X), 4)
        assert feats["all"].shape == (len(X), 4)

    def test_alignment_spec_drives_training(self):
        X, y = make_xy()
        plain = tiny_regressor().fit(X, y)
        aligned = tiny_regressor(alignment_spec="V-A", lambda_share=50.0).fit(X, y)
        assert not np.array_equal(plain.predict(X), aligned.predict(X))


class TestValidation:
    def test_missing_modality(self):
        X, y = make_xy(4)
        del X[2]["audio"]
        with pytest.raises(DataError, match="audio"):
            tiny_regressor().fit(X, y)

    def test_mismatched_lengths(self):
        X, y = make_xy(4)
        with pytest.raises(DataError):
            tiny_regressor().fit(X, y[:-1])

    def test_label_out_of_range(self):
        X, y = make_xy(4)
        y[0] = 99.0
        with pytest.raises(DataError, match="range"):
            tiny_regressor().fit(X, y)

    def test_bad_config_surfaces(self):
        X, y = make_xy(4)
        with pytest.raises(ConfigError):
            tiny_regressor(optimizer="bogus").fit(X, y)

    def test_predict_dim_mismatch(self):
        X, y = make_xy(8)
        est = tiny_regressor().fit(X, y)
        bad = [{"text": np.zeros((2, 9)), "audio": np.zeros((2, 3)),
                "vision": np.zeros((2, 3))}]
        with pytest.raises(DataError):
            est.predict(bad)
