"""End-to-end checks of drope_bench: exit codes, report schemas, determinism.

usage: check_cli.py BENCH SCHEMA_DIR SCENE_DIR WORK_DIR
"""

import csv
import json
import pathlib
import subprocess
import sys
import unittest

import jsonschema
import referencing

BENCH, SCHEMAS, SCENES, WORK = sys.argv[1:5]
SCHEMAS = pathlib.Path(SCHEMAS)
WORK = pathlib.Path(WORK)


def registry():
    resources = []
    for path in SCHEMAS.glob("*.schema.json"):
        doc = json.loads(path.read_text())
        resources.append((doc["$id"], referencing.Resource.from_contents(doc)))
    return referencing.Registry().with_resources(resources)


REGISTRY = registry()


def validate(doc, schema_name):
    schema = json.loads((SCHEMAS / schema_name).read_text())
    jsonschema.Draft202012Validator(schema, registry=REGISTRY).validate(doc)


def run(*args):
    return subprocess.run([BENCH, *map(str, args)], capture_output=True, text=True)


def without_timestamp(doc):
    doc = dict(doc)
    doc["header"] = {k: v for k, v in doc["header"].items() if k != "generated_at"}
    return doc


CONFIG = SCHEMAS.parent / "configs" / "default.json"


class ShippedConfig(unittest.TestCase):
    def test_every_command_accepts_it(self):
        scene = sorted(pathlib.Path(SCENES).glob("*.json"))[0]
        self.assertEqual(run("verify", "--config", CONFIG, "--out", WORK / "c-verify").returncode, 0)
        self.assertEqual(run("profile", "--config", CONFIG, "--out", WORK / "c-profile").returncode, 0)
        res = run("rollout", "--config", CONFIG, "--scene", scene, "--out", WORK / "c-rollout")
        self.assertEqual(res.returncode, 0, res.stderr)
        self.assertEqual(run("gen-scene", "--config", CONFIG, "--out", WORK / "c-scene").returncode, 0)


class Verify(unittest.TestCase):
    def test_default_suite_passes(self):
        out = WORK / "verify"
        res = run("verify", "--out", out)
        self.assertEqual(res.returncode, 0, res.stdout + res.stderr)
        report = json.loads((out / "verify.json").read_text())
        validate(report, "verify_report.schema.json")
        self.assertTrue(report["passed"])
        for prop in report["properties"]:
            self.assertTrue(prop["passed"], prop["name"])

    def test_fault_injection_is_a_violation(self):
        out = WORK / "verify-fault"
        res = run("verify", "--out", out, "--fault-inject", "rope-freqs-in-fangle")
        self.assertEqual(res.returncode, 1)
        report = json.loads((out / "verify.json").read_text())
        validate(report, "verify_report.schema.json")
        by_name = {p["name"]: p for p in report["properties"]}
        self.assertFalse(by_name["drope_relative_angle"]["passed"])
        self.assertTrue(by_name["rope_relative_position"]["passed"])

    def test_usage_errors(self):
        self.assertEqual(run("verify", "--trials", "0", "--out", WORK / "v0").returncode, 2)
        self.assertEqual(run("verify", "--fault-inject", "something-else").returncode, 2)
        self.assertEqual(run("verify", "--no-such-flag").returncode, 2)
        self.assertEqual(run().returncode, 2)
        bad = WORK / "bad-config.json"
        bad.write_text("{not json")
        self.assertEqual(run("verify", "--config", bad, "--out", WORK / "vb").returncode, 2)

    def test_reports_reproducible_apart_from_timestamp(self):
        a = WORK / "verify-a"
        b = WORK / "verify-b"
        run("verify", "--trials", "100", "--seed", "5", "--out", a)
        run("verify", "--trials", "100", "--seed", "5", "--out", b)
        ra = json.loads((a / "verify.json").read_text())
        rb = json.loads((b / "verify.json").read_text())
        self.assertEqual(without_timestamp(ra), without_timestamp(rb))


class Profile(unittest.TestCase):
    def test_default_sweep(self):
        out = WORK / "profile"
        res = run("profile", "--out", out)
        self.assertEqual(res.returncode, 0, res.stderr)
        report = json.loads((out / "profile.json").read_text())
        validate(report, "profile_report.schema.json")
        with open(out / "profile.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(len(rows), len(report["rows"]))
        grouped = {}
        for row in rows:
            grouped.setdefault((int(row["N"]), int(row["d_k"])), {})[row["variant"]] = row
        for (n, d_k), by_variant in grouped.items():
            rpe = int(by_variant["rpe"]["total_scalars"])
            for name, row in by_variant.items():
                if name != "rpe":
                    self.assertGreater(rpe, int(row["total_scalars"]))
            self.assertEqual(by_variant["plain"]["total_scalars"], by_variant["drope-hbh"]["total_scalars"])
        for n in {key[0] for key in grouped}:
            series = [int(grouped[key]["rpe"]["total_scalars"]) for key in sorted(grouped) if key[0] == n]
            self.assertEqual(series, sorted(series))
            self.assertEqual(len(set(series)), len(series))
        curves = (out / "curves.dat").read_text()
        self.assertEqual(curves.count("# variant"), 5)

    def test_single_variant_and_errors(self):
        res = run("profile", "--variant", "rpe", "--out", WORK / "profile-rpe")
        self.assertEqual(res.returncode, 0)
        self.assertEqual(run("profile", "--variant", "alibi", "--out", WORK / "pa").returncode, 2)
        empty = WORK / "empty-grid.json"
        empty.write_text(json.dumps({"profile": {"tokens": []}}))
        self.assertEqual(run("profile", "--config", empty, "--out", WORK / "pe").returncode, 2)
        blocker = WORK / "not-a-dir"
        blocker.write_text("")
        self.assertEqual(run("profile", "--out", blocker / "sub").returncode, 2)


class Rollout(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        res = run("gen-scene", "--constant-velocity", "--seed", "4", "--out", WORK / "scenes")
        assert res.returncode == 0, res.stderr
        cls.scene = pathlib.Path(res.stdout.strip())

    def test_generated_scene_matches_schema(self):
        validate(json.loads(self.scene.read_text()), "scene.schema.json")

    def test_shipped_scenes_match_schema(self):
        shipped = sorted(pathlib.Path(SCENES).glob("*.json"))
        self.assertTrue(shipped)
        for path in shipped:
            validate(json.loads(path.read_text()), "scene.schema.json")

    def test_constant_velocity_self_consistency(self):
        out = WORK / "rollout-cv"
        res = run("rollout", "--scene", self.scene, "--policy", "constant-velocity", "--out", out)
        self.assertEqual(res.returncode, 0, res.stderr)
        report = json.loads((out / "rollout.json").read_text())
        validate(report, "rollout_report.schema.json")
        self.assertLess(report["min_ade"], 1e-9)

    def test_same_seed_same_bytes(self):
        a = WORK / "rollout-a"
        b = WORK / "rollout-b"
        for out in (a, b):
            res = run("rollout", "--scene", self.scene, "--seed", "3", "--variant", "drope-ih", "--out", out)
            self.assertEqual(res.returncode, 0, res.stderr)
        self.assertEqual((a / "trajectories.csv").read_bytes(), (b / "trajectories.csv").read_bytes())
        ra = json.loads((a / "rollout.json").read_text())
        rb = json.loads((b / "rollout.json").read_text())
        validate(ra, "rollout_report.schema.json")
        self.assertEqual(without_timestamp(ra), without_timestamp(rb))
        header = (a / "trajectories.csv").read_text().splitlines()[0]
        self.assertEqual(header, "scene_id,agent_id,t,x,y,yaw,v")

    def test_long_horizon_warns_and_proceeds(self):
        out = WORK / "rollout-long"
        res = run("rollout", "--scene", self.scene, "--horizon", "17", "--policy", "constant-velocity", "--out", out)
        self.assertEqual(res.returncode, 0)
        self.assertIn("warning", res.stderr)
        report = json.loads((out / "rollout.json").read_text())
        self.assertEqual(len(report["warnings"]), 1)
        self.assertIsNone(report["min_ade"])

    def test_missing_scene_is_an_io_error(self):
        self.assertEqual(run("rollout", "--scene", WORK / "missing.json", "--out", WORK / "rm").returncode, 2)
        self.assertEqual(run("rollout", "--out", WORK / "rn").returncode, 2)


if __name__ == "__main__":
    WORK.mkdir(parents=True, exist_ok=True)
    unittest.main(argv=[sys.argv[0], "-v"])
