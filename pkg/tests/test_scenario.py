import json

import pytest

from tinytwin.chan_model import identity_trace, write_trace
from tinytwin.errors import ValidationError
from tinytwin.scenario import TraceSpec, load_scenario, parse_duration, parse_scenario, parse_snr_range


@pytest.mark.parametrize("text,seconds", [("60s", 60.0), ("500ms", 0.5), ("2m", 120.0), ("1.5", 1.5),
                                          (3, 3.0), ("250us", 250e-6), ("1h", 3600.0)])
def test_parse_duration(text, seconds):
    assert parse_duration(text) == pytest.approx(seconds)


@pytest.mark.parametrize("bad", ["", "fast", "10 parsecs", "-1s", 0, "0ms"])
def test_parse_duration_rejects(bad):
    with pytest.raises(ValidationError):
        parse_duration(bad)


def test_parse_snr_range():
    assert parse_snr_range("20:0") == (20.0, 0.0)
    assert parse_snr_range("-3:-10") == (-3.0, -10.0)
    with pytest.raises(ValidationError):
        parse_snr_range("20")


def test_trace_spec_doppler_resolution():
    assert TraceSpec("uma", speed_kmh=60).resolved_doppler == pytest.approx(60 / 3.6 * 3.5e9 / 3e8)
    assert round(TraceSpec("uma", speed_kmh=60).resolved_doppler, 1) == 194.4
    assert TraceSpec("uma", doppler_hz=12.5).resolved_doppler == 12.5
    assert TraceSpec("uma").resolved_doppler == 0.0
    with pytest.raises(ValidationError):
        TraceSpec("uma", speed_kmh=5, doppler_hz=3).validate()
    with pytest.raises(ValidationError):
        TraceSpec("suburban-moon").validate()


def test_trace_spec_from_dict():
    spec = TraceSpec.from_dict({"profile": "synthetic-periodic", "period": "2s", "snr": "15:5", "duration": "4s"})
    assert (spec.period, spec.snr_high_db, spec.snr_low_db, spec.duration) == (2.0, 15.0, 5.0, 4.0)
    assert spec.build().num_steps == 4000
    with pytest.raises(ValidationError):
        TraceSpec.from_dict({"profile": "uma", "colour": "blue"})


def write(path, text):
    path.write_text(text)
    return path


TOML = """
mode = "vanilla"
duration = "250ms"
noise_power = 0.01
noise_seed = 4
offered_bits_per_slot = 2000

[gnb]
host = "127.0.0.1"
port = 0

[[ue]]
id = 0
trace = "a.cirt"
pinning = [0]

[[ue]]
id = 3
generator = { profile = "uma", speed_kmh = 5, duration = "1s", seed = 7 }
"""


def test_load_toml_scenario(tmp_path):
    write_trace(identity_trace(), tmp_path / "a.cirt")
    scen = load_scenario(write(tmp_path / "s.toml", TOML))
    assert scen.mode == "vanilla" and scen.num_slots == 250
    assert [u.ue_id for u in scen.ues] == [0, 3]
    assert scen.ues[0].trace_path == tmp_path / "a.cirt"
    assert scen.ues[1].generator.seed == 7
    assert scen.pinning_map() == {"ue0": [0]}
    cfg = scen.session_config({u.ue_id: u.load(scen.sample_rate) for u in scen.ues})
    assert cfg.noise_power == 0.01 and cfg.noise_seed == 4


def test_json_scenario_equivalent(tmp_path):
    write_trace(identity_trace(), tmp_path / "a.cirt")
    doc = {"mode": "optimized", "duration": 0.1, "ue": [{"id": 1, "trace": "a.cirt"}]}
    scen = load_scenario(write(tmp_path / "s.json", json.dumps(doc)))
    assert scen.num_slots == 100 and scen.ues[0].trace_path.is_file()


@pytest.mark.parametrize("doc,needle", [
    ({"ue": []}, "at least one"),
    ({"ue": [{"id": 0}, {"id": 0}]}, "duplicate"),
    ({"ue": [{"id": 0, "trace": "missing.cirt"}]}, "does not exist"),
    ({"mode": "warp", "ue": [{"id": 0}]}, "mode"),
    ({"ue": [{"id": 0}], "volume": 11}, "unknown scenario keys"),
    ({"ue": [{"id": 0, "speed": 3}]}, "unknown keys"),
    ({"ue": [{"id": 0, "trace": "x", "generator": {"profile": "uma"}}]}, "either"),
    ({"ue": [{"id": 0}], "samples_per_slot": 0}, "samples_per_slot"),
])
def test_scenario_validation(tmp_path, doc, needle):
    with pytest.raises(ValidationError, match=needle):
        parse_scenario(doc, tmp_path)


def test_malformed_toml(tmp_path):
    with pytest.raises(ValidationError, match="not valid"):
        load_scenario(write(tmp_path / "bad.toml", "mode = [unclosed"))
    with pytest.raises(ValidationError, match="cannot read"):
        load_scenario(tmp_path / "nope.toml")
