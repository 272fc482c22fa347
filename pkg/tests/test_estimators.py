import numpy as np
import pytest
from sklearn.base import clone

from iqfed import FederatedTripletEncoder, LinearSVMClassifier, TripletEncoder
from iqfed.signal import ChannelLaw, generate_frames
from iqfed.validation import check_iq

SMALL = dict(depth=2, channels=4, feature_dim=6, batch_size=2, negatives=2, min_window=4)


def pool(n=8, length=16, seed=0):
    return generate_frames("QPSK", n, ChannelLaw(frame_length=length), np.random.default_rng(seed))


def test_check_iq_layouts():
    fs = pool()
    a = check_iq(fs)
    b = check_iq(fs.samples)
    assert a.shape == (8, 2, 16) and np.array_equal(a, b)
    with pytest.raises(ValueError):
        check_iq(np.ones((3, 3, 5)))
    with pytest.raises(ValueError):
        check_iq(np.ones((3, 2, 1)))
    with pytest.raises(ValueError):
        check_iq(np.full((2, 2, 4), np.nan))


def test_triplet_encoder_fit_transform():
    enc = TripletEncoder(steps=2, **SMALL)
    feats = enc.fit(pool()).transform(pool(3, seed=1))
    assert feats.shape == (3, 6) and np.all(np.isfinite(feats))
    assert enc.losses_.shape == (2,)
    again = clone(enc).fit(pool())
    assert again.params_.flat.tobytes() == enc.params_.flat.tobytes()
    assert enc.get_params()["depth"] == 2


def test_unfitted_transform_raises():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        TripletEncoder(**SMALL).transform(pool())


def test_federated_encoder():
    enc = FederatedTripletEncoder(rounds=2, local_steps=1, quantization=["f32", "int8"], **SMALL)
    enc.fit([pool(6, seed=0), pool(7, seed=1)])
    assert len(enc.metrics_) == 4
    assert enc.transform(pool(2)).shape == (2, 6)
    with pytest.raises(ValueError):
        FederatedTripletEncoder(**SMALL).fit([])


def test_svm_classifier_string_labels():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(-3, 1, (20, 2)), rng.normal(3, 1, (20, 2))])
    y = np.array(["bpsk"] * 20 + ["qpsk"] * 20)
    clf = LinearSVMClassifier().fit(x, y)
    assert clf.score(x, y) == 1.0
    assert set(clf.predict(x)) == {"bpsk", "qpsk"}
    assert clf.decision_function(x).shape == (40, 2)
    with pytest.raises(ValueError):
        clf.fit(x, y[:5])
