"""verify_compat: pass/fail with actionable reasons, never raising."""

import json

import numpy as np
import pytest

from expert_exporter import verify_compat, write_evgf


@pytest.fixture()
def evgf(tmp_path):
    path = tmp_path / "m.evgf"
    write_evgf(path, "metric", np.ones((2, 4, 16), np.float32))
    return path


def _config(tmp_path, k_v=4, d_e=16, variant="full", **extra):
    path = tmp_path / "config.json"
    payload = {"heads": {"k_v": k_v, "d_e": d_e}, "variant": variant}
    payload.update(extra)
    path.write_text(json.dumps(payload))
    return path


def test_matched_config_passes(evgf, tmp_path):
    result = verify_compat(evgf, _config(tmp_path))
    assert result
    assert result.ok and result.reason == "compatible"


def test_dict_config_accepted(evgf):
    assert verify_compat(evgf, {"heads": {"k_v": 4, "d_e": 16}, "variant": "full"})


def test_d_e_mismatch_names_both_values(evgf, tmp_path):
    result = verify_compat(evgf, _config(tmp_path, d_e=32))
    assert not result
    assert "D_e mismatch" in result.reason
    assert "16" in result.reason and "32" in result.reason


def test_k_v_mismatch_names_both_values(evgf, tmp_path):
    result = verify_compat(evgf, _config(tmp_path, k_v=8))
    assert not result
    assert "K_v mismatch" in result.reason
    assert "4" in result.reason and "8" in result.reason


def test_corrupted_payload_fails_with_offset(evgf, tmp_path):
    blob = bytearray(evgf.read_bytes())
    blob[21:25] = b"\x00\x00\xc0\x7f"  # NaN as little-endian f32
    bad = tmp_path / "bad.evgf"
    bad.write_bytes(bytes(blob))
    result = verify_compat(bad, _config(tmp_path))
    assert not result
    assert "offset 21" in result.reason


def test_truncated_file_fails_with_offset(evgf, tmp_path):
    bad = tmp_path / "short.evgf"
    bad.write_bytes(evgf.read_bytes()[:30])
    result = verify_compat(bad, _config(tmp_path))
    assert not result
    assert "offset" in result.reason


def test_missing_file_fails(tmp_path):
    result = verify_compat(tmp_path / "none.evgf", _config(tmp_path))
    assert not result and "cannot read feature file" in result.reason


def test_missing_config_fails(evgf, tmp_path):
    result = verify_compat(evgf, tmp_path / "none.json")
    assert not result and "cannot read config" in result.reason


def test_invalid_json_config_fails(evgf, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    result = verify_compat(evgf, bad)
    assert not result and "not valid JSON" in result.reason


def test_config_without_heads_fails(evgf, tmp_path):
    bad = tmp_path / "no_heads.json"
    bad.write_text(json.dumps({"variant": "full"}))
    result = verify_compat(evgf, bad)
    assert not result and "heads.k_v" in result.reason


def test_inactive_pathway_under_variant(evgf, tmp_path):
    for variant in ("baseline", "struct-only"):
        result = verify_compat(evgf, _config(tmp_path, variant=variant))
        assert not result
        assert f"inactive under variant '{variant}'" in result.reason


def test_structural_active_under_struct_only(tmp_path):
    path = tmp_path / "s.evgf"
    write_evgf(path, "structural", np.ones((1, 4, 16), np.float32))
    assert verify_compat(path, _config(tmp_path, variant="struct-only"))


def test_unknown_variant_fails(evgf, tmp_path):
    result = verify_compat(evgf, _config(tmp_path, variant="fancy"))
    assert not result and "unknown variant" in result.reason
