import json

import pytest

from pipebrew.exceptions import ProfileFormatError, ValidationError
from pipebrew.profile import (
    HardwareSpec,
    LayerProfile,
    ModelProfile,
    load_profile,
    save_profile,
    synth_profile,
)


@pytest.fixture
def layer_payload():
    return {
        "name": "conv1",
        "fwd_time": 0.01,
        "bwd_time": 0.02,
        "activation_elems": 1000,
        "param_elems": 500,
    }


@pytest.fixture
def profile_file(tmp_path, layer_payload):
    def write(payload):
        path = tmp_path / "profile.json"
        path.write_text(json.dumps(payload))
        return path

    return write


class TestLayerProfile:
    def test_total_time(self):
        layer = LayerProfile(1, "a", 1.0, 2.0, 10, 10)
        assert layer.total_time == 3.0

    def test_negative_time(self):
        with pytest.raises(ValidationError, match="Layer 1 \\('a'\\)"):
            LayerProfile(1, "a", -1.0, 2.0, 10, 10)

    def test_zero_total_time(self):
        with pytest.raises(ValidationError, match="must be positive"):
            LayerProfile(1, "a", 0.0, 0.0, 10, 10)

    def test_float_elems(self):
        with pytest.raises(ValidationError):
            LayerProfile(1, "a", 1.0, 1.0, 10.5, 10)


class TestModelProfile:
    def test_empty(self):
        with pytest.raises(ValidationError, match="at least one layer"):
            ModelProfile(layers=())

    def test_layer_ids_must_run_in_order(self):
        with pytest.raises(ValidationError, match="expected 1"):
            ModelProfile(layers=(LayerProfile(2, "a", 1.0, 1.0, 0, 0),))

    def test_totals(self):
        profile = ModelProfile(
            layers=(
                LayerProfile(1, "a", 1.0, 2.0, 0, 5),
                LayerProfile(2, "b", 0.5, 0.5, 0, 7),
            )
        )
        assert profile.num_layers == 2
        assert profile.total_time == 4.0
        assert profile.total_params == 12
        assert profile.layer(2).name == "b"


class TestLoadProfile:
    def test_load_profile(self, profile_file, layer_payload):
        path = profile_file({"minibatch_size": 32, "layers": [layer_payload, layer_payload]})
        profile = load_profile(path)
        assert profile.num_layers == 2
        assert profile.minibatch_size == 32
        assert profile.layer(2).layer_id == 2

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"layers": [\n  {"name": }\n]}')
        with pytest.raises(ProfileFormatError, match="line 2"):
            load_profile(path)

    def test_missing_field(self, profile_file, layer_payload):
        del layer_payload["bwd_time"]
        path = profile_file({"minibatch_size": 1, "layers": [layer_payload]})
        with pytest.raises(ProfileFormatError, match="layers\\[0\\] is missing field 'bwd_time'"):
            load_profile(path)

    def test_missing_layers(self, profile_file):
        with pytest.raises(ProfileFormatError, match="'layers'"):
            load_profile(profile_file({"minibatch_size": 1}))

    def test_negative_time_names_layer(self, profile_file, layer_payload):
        layer_payload["fwd_time"] = -1
        path = profile_file({"minibatch_size": 1, "layers": [layer_payload]})
        with pytest.raises(ValidationError, match="conv1"):
            load_profile(path)

    def test_round_trip(self, tmp_path):
        profile = synth_profile("vgg_like", 8, seed=3)
        path = save_profile(profile, tmp_path / "vgg.json")
        assert load_profile(path) == profile


class TestHardwareSpec:
    def test_default_bytes_per_elem(self):
        assert HardwareSpec(4, 1.25e9).bytes_per_elem == 4

    def test_zero_machines(self):
        with pytest.raises(ValidationError):
            HardwareSpec(0, 1.25e9)

    def test_negative_bandwidth(self):
        with pytest.raises(ValidationError, match="bandwidth"):
            HardwareSpec(2, -1.0)


class TestSynthProfile:
    def test_unknown_kind(self):
        with pytest.raises(ValidationError, match="Unknown profile kind 'resnet'"):
            synth_profile("resnet", 8)

    def test_deterministic(self):
        assert synth_profile("inception_like", 6, seed=1) == synth_profile(
            "inception_like", 6, seed=1
        )
