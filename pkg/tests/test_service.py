import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from stressnet.service.app import OUTPUT_DIR_ENV, create_app


SYNTH = {
    "p": 16,
    "segments": [
        {"length": 120, "mean": 0.0,
         "covariance": {"kind": "block", "sizes": [8, 8], "rho_within": 0.5,
                        "rho_between": 0.1}},
        {"length": 120, "mean": 0.0,
         "covariance": {"kind": "block", "sizes": [8, 8], "rho_within": 0.1,
                        "rho_between": 0.0}},
    ],
    "seed": 5,
}


@pytest.fixture
def client():
    return TestClient(create_app())


def write_sectors(tmp_path, p=16, n_sectors=6):
    path = tmp_path / "sectors.csv"
    lines = ["ticker,sector"]
    for i in range(p):
        lines.append(f"S{i:03d},G{i % n_sectors}")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    assert body["models_loaded"] == 0


def test_pipeline_endpoint(client, tmp_path):
    resp = client.post(
        "/pipeline",
        json={
            "synth": SYNTH,
            "output_dir": str(tmp_path / "out"),
            "seed": 1,
            "icc_states": 2,
            "icc_gamma": 10.0,
            "icc_restarts": 2,
            "profile_trials": 5,
            "group_n": 3,
            "sectors_path": write_sectors(tmp_path),
        },
    )
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert body["status"] == "complete"
    arts = body["artifacts"]
    assert "states/partition.csv" in arts
    assert "stress/singles.csv" in arts
    assert "regressions/full_period.json" not in arts or True
    assert (tmp_path / "out" / "manifest.json").exists()
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["artifacts"] == arts


def test_single_stage_endpoint(client, tmp_path):
    resp = client.post(
        "/stages/network",
        json={"synth": SYNTH, "output_dir": str(tmp_path / "net"), "seed": 2},
    )
    assert resp.status_code == 200
    assert "network/model.json" in resp.json()["artifacts"]


def test_unknown_stage_maps_to_validation(client, tmp_path):
    resp = client.post(
        "/stages/nonsense",
        json={"synth": SYNTH, "output_dir": str(tmp_path / "x")},
    )
    assert resp.status_code == 422
    assert resp.json()["kind"] == "validation"
    assert resp.json()["exit_code"] == 2


def test_missing_input_error(client, tmp_path):
    resp = client.post("/pipeline", json={"output_dir": str(tmp_path / "y")})
    assert resp.status_code == 422
    assert "no input" in resp.json()["error"]


def test_data_error_status(client, tmp_path):
    resp = client.post(
        "/pipeline",
        json={"prices_path": "/nonexistent.csv", "output_dir": str(tmp_path / "z")},
    )
    assert resp.status_code == 400
    assert resp.json()["kind"] == "data"
    assert resp.json()["exit_code"] == 3


def test_numerical_error_status(tmp_path, monkeypatch):
    from stressnet.errors import NumericalError
    import stressnet.service.app as app_module

    def boom(cfg, stages=None):
        raise NumericalError("synthetic numerical failure")

    monkeypatch.setattr(app_module, "run_pipeline", boom)
    client = TestClient(app_module.create_app())
    resp = client.post(
        "/pipeline", json={"synth": SYNTH, "output_dir": str(tmp_path / "n")}
    )
    assert resp.status_code == 500
    assert resp.json()["kind"] == "numerical"
    assert resp.json()["exit_code"] == 4


def test_output_dir_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "envout"))
    client = TestClient(create_app())
    resp = client.post("/stages/ingest", json={"synth": SYNTH, "seed": 3})
    assert resp.status_code == 200
    assert resp.json()["output_dir"] == str(tmp_path / "envout")
    assert (tmp_path / "envout" / "universe.json").exists()


def test_no_output_dir_anywhere(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    client = TestClient(create_app())
    resp = client.post("/stages/ingest", json={"synth": SYNTH})
    assert resp.status_code == 422


class TestModelRegistry:
    def test_build_and_query(self, client, tmp_path):
        resp = client.post(
            "/models",
            json={"synth": SYNTH, "sectors_path": write_sectors(tmp_path),
                  "model_id": "demo"},
        )
        assert resp.status_code == 200, resp.text
        summary = resp.json()
        assert summary["model_id"] == "demo"
        assert summary["n_assets"] == 16
        assert summary["n_edges"] == 3 * 16 - 6

        listing = client.get("/models").json()
        assert [m["model_id"] for m in listing] == ["demo"]

        imp = client.post(
            "/models/demo/impact", json={"stressed": ["S000", "S001"]}
        )
        assert imp.status_code == 200
        body = imp.json()
        assert body["direction"] == "impact"
        assert len(body["evaluated"]) == 14
        assert np.isfinite(body["value"])

        rsp = client.post("/models/demo/response", json={"stressed": ["S000"]})
        assert rsp.status_code == 200
        assert rsp.json()["direction"] == "response"

        cm = client.post(
            "/models/demo/conditional-mean",
            json={"stressed": ["S000"], "shock": [1.0]},
        )
        assert cm.status_code == 200
        shifts = cm.json()["shifts"]
        assert len(shifts) == 15 and "S000" not in shifts

        gs = client.post(
            "/models/demo/group-search", json={"n": 3, "restarts": 4, "seed": 9}
        )
        assert gs.status_code == 200
        gbody = gs.json()
        assert len(gbody["group"]) == 3
        assert len(gbody["restart_impacts"]) == 4
        assert gbody["sectors"] is not None

        assert client.delete("/models/demo").status_code == 200
        assert client.get("/models").json() == []

    def test_unknown_ticker_and_model(self, client):
        client.post("/models", json={"synth": SYNTH, "model_id": "m1"})
        resp = client.post("/models/m1/impact", json={"stressed": ["ZZZ"]})
        assert resp.status_code == 422
        assert "ZZZ" in resp.json()["error"]
        resp = client.post("/models/ghost/impact", json={"stressed": ["S000"]})
        assert resp.status_code == 422

    def test_impact_value_consistent_with_library(self, client):
        client.post("/models", json={"synth": SYNTH, "model_id": "m2"})
        via_api = client.post(
            "/models/m2/impact", json={"stressed": ["S000"]}
        ).json()["value"]

        from stressnet.data_ingest import (
            SynthConfig, compute_log_returns, filter_full_history, standardize,
            synth_generate,
        )
        from stressnet.logo import estimate_precision
        from stressnet.stress import impact
        from stressnet.tmfg import build_tmfg, clique_forest, correlation_matrix

        doc = dict(SYNTH)
        seed = doc.pop("seed")
        table = filter_full_history(synth_generate(SynthConfig.from_dict(doc), seed=seed))
        rets = standardize(compute_log_returns(table))
        net = build_tmfg(correlation_matrix(rets))
        model = estimate_precision(rets, clique_forest(net))
        assert via_api == pytest.approx(impact(model, (0,)).value, abs=1e-12)
