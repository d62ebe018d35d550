import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from trafficsynth.cli import main
from trafficsynth.dataset import read_segment_wav
from trafficsynth.manifest import read_manifest

pytestmark = pytest.mark.filterwarnings("ignore::scipy.io.wavfile.WavFileWarning")


def write_config(path: Path, car_l2r=40.0, car_r2l=30.0, cv_l2r=8.0, cv_r2l=5.0, **gen_overrides) -> Path:
    # 32 kHz simulation keeps CLI tests quick; the bundled configs use 48 kHz.
    generation = {
        "sim_sample_rate": 32_000,
        "seed": 7,
        "hours": 0.05,
    }
    generation.update(gen_overrides)
    doc = {
        "profile": {
            "speed_mean_kmh": 80.0,
            "speed_std_kmh": 10.0,
            "hourly_rates": {
                "car": {"l2r": car_l2r, "r2l": car_r2l},
                "cv": {"l2r": cv_l2r, "r2l": cv_r2l},
            },
        },
        "generation": generation,
        "features": {"enabled": True},
    }
    path.write_text(yaml.safe_dump(doc))
    return path


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    """One small generated dataset shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli_dataset")
    config = write_config(root / "config.yaml")
    out = root / "data"
    assert main(["generate", "--config", str(config), "--out", str(out)]) == 0
    return out


class TestGenerate:
    def test_manifest_lists_expected_segments(self, generated):
        records = read_manifest(generated / "manifest.jsonl")
        assert len(records) == 3  # 0.05 h = 3 x 60 s
        for k, rec in enumerate(records):
            assert rec.segment_index == k
            assert (generated / rec.audio_path).exists()
            assert (generated / rec.feature_path).exists()
            assert rec.sample_rate == 16_000
            assert rec.num_channels == 4

    def test_audio_shape_and_rate(self, generated):
        records = read_manifest(generated / "manifest.jsonl")
        rate, audio = read_segment_wav(generated / records[0].audio_path)
        assert rate == 16_000
        assert audio.shape == (4, 960_000)

    def test_validate_passes(self, generated, capsys):
        assert main(["validate", str(generated / "manifest.jsonl")]) == 0
        assert "validation passed" in capsys.readouterr().out

    def test_label_conservation_against_schedule(self, generated):
        records = read_manifest(generated / "manifest.jsonl")
        totals = np.sum([r.counts for r in records], axis=0)
        events = {}
        for rec in records:
            for ev in rec.events:
                events[ev["event_id"]] = ev
        by_cat = np.zeros(4, dtype=int)
        names = ("car_l2r", "car_r2l", "cv_l2r", "cv_r2l")
        for ev in events.values():
            by_cat[names.index(f"{ev['class']}_{ev['direction']}")] += 1
        np.testing.assert_array_equal(totals, by_cat)

    def test_rerun_reproduces_bytes(self, generated, tmp_path):
        config = write_config(tmp_path / "config.yaml")
        out = tmp_path / "data2"
        assert main(["generate", "--config", str(config), "--out", str(out)]) == 0
        a = (generated / "manifest.jsonl").read_bytes()
        b = (out / "manifest.jsonl").read_bytes()
        assert a == b
        rec = read_manifest(out / "manifest.jsonl")[0]
        assert (generated / rec.audio_path).read_bytes() == (out / rec.audio_path).read_bytes()

    def test_zero_rate_profile_silent(self, tmp_path):
        config = write_config(tmp_path / "c.yaml", car_l2r=0.0, car_r2l=0.0, cv_l2r=0.0, cv_r2l=0.0)
        out = tmp_path / "data"
        assert main(["generate", "--config", str(config), "--out", str(out)]) == 0
        records = read_manifest(out / "manifest.jsonl")
        assert all(rec.counts == (0, 0, 0, 0) for rec in records)
        _, audio = read_segment_wav(out / records[0].audio_path)
        assert np.max(np.abs(audio)) == 0.0

    def test_labels_only_mode(self, tmp_path):
        config = write_config(tmp_path / "c.yaml", hours=1.0)
        out = tmp_path / "labels"
        assert main(["generate", "--config", str(config), "--out", str(out), "--labels-only"]) == 0
        records = read_manifest(out / "manifest.jsonl")
        assert len(records) == 60
        assert all(r.audio_path is None for r in records)
        assert main(["validate", str(out / "manifest.jsonl")]) == 0

    def test_nonempty_output_dir_rejected(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.yaml")
        out = tmp_path / "data"
        out.mkdir()
        (out / "junk.txt").write_text("x")
        assert main(["generate", "--config", str(config), "--out", str(out)]) == 2

    def test_missing_config_is_config_error(self, tmp_path):
        assert main(["generate", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "d")]) == 2


class TestValidateFailures:
    @pytest.fixture()
    def dataset(self, tmp_path):
        config = write_config(tmp_path / "c.yaml")
        out = tmp_path / "data"
        assert main(["generate", "--config", str(config), "--out", str(out)]) == 0
        return out

    def test_deleted_audio_detected(self, dataset, capsys):
        records = read_manifest(dataset / "manifest.jsonl")
        victim = records[1].audio_path
        (dataset / victim).unlink()
        assert main(["validate", str(dataset / "manifest.jsonl")]) == 1
        assert victim in capsys.readouterr().out

    def test_broken_label_conservation_detected(self, dataset, capsys):
        manifest = dataset / "manifest.jsonl"
        lines = manifest.read_text().splitlines()
        doc = json.loads(lines[0])
        doc["counts"][0] += 1
        lines[0] = json.dumps(doc, sort_keys=True)
        manifest.write_text("\n".join(lines) + "\n")
        assert main(["validate", str(manifest)]) == 1
        out = capsys.readouterr().out
        assert "delta" in out or "conservation" in out

    def test_unreadable_manifest_is_io_error(self, tmp_path):
        assert main(["validate", str(tmp_path / "missing.jsonl")]) == 3


class TestScore:
    def _write_predictions(self, path: Path, rows):
        with open(path, "w") as fh:
            for idx, values in rows:
                fh.write(json.dumps({"segment_index": idx, "prediction": list(values)}) + "\n")

    def test_perfect_predictions(self, generated, tmp_path):
        records = read_manifest(generated / "manifest.jsonl")
        pred_path = tmp_path / "preds.jsonl"
        self._write_predictions(pred_path, [(r.segment_index, [float(c) for c in r.counts]) for r in records])
        out = tmp_path / "report.json"
        code = main(["score", "--pred", str(pred_path), "--manifest", str(generated / "manifest.jsonl"), "--out", str(out)])
        assert code == 0
        report = json.loads(out.read_text())
        assert all(v == 1.0 for v in report["accuracy"].values())
        assert all(v is None for v in report["mae_mis"].values())

    def test_shuffled_rows_same_report(self, generated, tmp_path):
        records = read_manifest(generated / "manifest.jsonl")
        rows = [(r.segment_index, [float(c) for c in r.counts]) for r in records]
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        self._write_predictions(a, rows)
        self._write_predictions(b, rows[::-1])
        ra, rb = tmp_path / "ra.json", tmp_path / "rb.json"
        manifest = str(generated / "manifest.jsonl")
        assert main(["score", "--pred", str(a), "--manifest", manifest, "--out", str(ra)]) == 0
        assert main(["score", "--pred", str(b), "--manifest", manifest, "--out", str(rb)]) == 0
        assert ra.read_text() == rb.read_text()

    def test_missing_segments_listed(self, generated, tmp_path, capsys):
        pred_path = tmp_path / "preds.jsonl"
        self._write_predictions(pred_path, [(0, [0.0, 0.0, 0.0, 0.0])])
        code = main(["score", "--pred", str(pred_path), "--manifest", str(generated / "manifest.jsonl")])
        assert code == 1

    def test_ten_percent_perturbation_fixture(self, tmp_path):
        # synthetic manifest: labels only, 100 segments
        manifest = tmp_path / "manifest.jsonl"
        with open(manifest, "w") as fh:
            for k in range(100):
                fh.write(
                    json.dumps(
                        {
                            "segment_index": k,
                            "counts": [2, 1, 0, 0],
                            "events": [],
                            "audio_path": None,
                            "feature_path": None,
                            "sample_rate": 16_000,
                            "num_channels": 4,
                            "duration_s": 60.0,
                            "audio_format": "float32",
                        }
                    )
                    + "\n"
                )
        rows = [(k, [2.0 + (1.0 if k < 10 else 0.0), 1.0, 0.0, 0.0]) for k in range(100)]
        pred_path = tmp_path / "preds.jsonl"
        self._write_predictions(pred_path, rows)
        out = tmp_path / "report.json"
        assert main(["score", "--pred", str(pred_path), "--manifest", str(manifest), "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["accuracy"]["car_l2r"] == pytest.approx(0.9)
        assert report["mae_mis"]["car_l2r"] == pytest.approx(1.0)


class TestFeaturesCommand:
    def test_reextract_with_other_framing(self, tmp_path):
        config = write_config(tmp_path / "c.yaml", hours=1 / 60)
        out = tmp_path / "data"
        assert main(["generate", "--config", str(config), "--out", str(out)]) == 0
        assert main(["features", "--manifest", str(out / "manifest.jsonl"), "--frame", "1024", "--hop", "1024", "--max-lag", "24"]) == 0
        from trafficsynth.features import load_features

        rec = read_manifest(out / "manifest.jsonl")[0]
        gcc, spec, meta = load_features(out / rec.feature_path)
        assert meta["hop"] == 1024 and meta["max_lag"] == 24
        assert gcc.values.shape[-1] == 49
        assert main(["validate", str(out / "manifest.jsonl")]) == 0
