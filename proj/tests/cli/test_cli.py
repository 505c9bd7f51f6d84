"""End-to-end checks of the qsid executable: exit codes, outputs, JSON schema."""

import json
import os
import re
import subprocess
import tempfile
import unittest
from pathlib import Path

import jsonschema

QSID = os.environ["QSID_CLI"]
SCHEMA = Path(os.environ["QSID_SCHEMA"])


def qsid(*args, env=None):
    return subprocess.run([QSID, *map(str, args)], capture_output=True, text=True, env=env)


class CliTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        r = qsid("simulate", "--out", cls.root / "exam", "--students", 150, "--questions", 50,
                 "--plant", 3, "--seed", 4)
        assert r.returncode == 0, r.stderr
        cls.exam = cls.root / "exam" / "exam_001.csv"
        cls.schema = json.loads(SCHEMA.read_text())

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def analyze(self, out, *extra):
        return qsid("analyze", "--input", self.exam, "--out", out, "--seed", 9,
                    "--synthetic-students", 3000, *extra)

    def test_analyze_writes_valid_outputs(self):
        out = self.root / "full"
        r = self.analyze(out)
        self.assertEqual(r.returncode, 0, r.stderr)
        doc = json.loads((out / "results.json").read_text())
        jsonschema.validate(doc, self.schema, cls=jsonschema.Draft202012Validator)
        self.assertEqual(doc["header"]["n_students"], 150)
        self.assertGreaterEqual(len(doc["groups"]), 1)
        html = (out / "report.html").read_text()
        self.assertNotIn("<script", html)
        self.assertEqual(set(re.findall(r"https?://[^\"' )]+", html)), {"http://www.w3.org/2000/svg"})

    def test_json_only_and_repeatable(self):
        a, b = self.root / "a", self.root / "b"
        self.assertEqual(self.analyze(a, "--format", "json").returncode, 0)
        self.assertEqual(self.analyze(b, "--format", "json").returncode, 0)
        self.assertFalse((a / "report.html").exists())
        self.assertEqual((a / "results.json").read_bytes(), (b / "results.json").read_bytes())

    def test_empirical_sample_overlay(self):
        sample = self.root / "null_cs.csv"
        sample.write_text("# label: test sample\ncs\n0.8\n1.0\n1.2\n")
        out = self.root / "emp"
        self.assertEqual(self.analyze(out, "--empirical-cs", sample).returncode, 0)
        doc = json.loads((out / "results.json").read_text())
        self.assertEqual(doc["cs_histograms"]["empirical"]["total"], 3)
        self.assertEqual(doc["cs_histograms"]["empirical_label"], "test sample")

    def test_usage_errors_exit_1(self):
        self.assertEqual(qsid().returncode, 1)
        self.assertEqual(qsid("analyze", "--bogus").returncode, 1)
        self.assertEqual(qsid("analyze", "--input", self.exam).returncode, 1)

    def test_ineligible_exam_exits_2(self):
        small = self.root / "small"
        self.assertEqual(qsid("simulate", "--out", small, "--students", 24, "--questions", 40).returncode, 0)
        r = qsid("analyze", "--input", small / "exam_001.csv", "--out", self.root / "small_out")
        self.assertEqual(r.returncode, 2)
        self.assertIn("rejected_too_few_students", r.stderr)

    def test_input_errors_exit_3(self):
        self.assertEqual(qsid("analyze", "--input", self.root / "missing.csv", "--out", self.root).returncode, 3)
        bad = self.root / "bad.csv"
        bad.write_text("student_id,q1,q2\nA,1,2\nB,1,-3\n")
        r = qsid("analyze", "--input", bad, "--out", self.root / "bad_out")
        self.assertEqual(r.returncode, 3)
        self.assertIn("row 3", r.stderr)
        table = self.root / "broken_table.csv"
        table.write_text("class_size,c1,c2,c3,c4\n50,2,1,3,4\n")
        self.assertEqual(self.analyze(self.root / "t", "--thresholds", table).returncode, 3)
        self.assertEqual(self.analyze(self.root / "t", "--thresholds", self.root / "none.csv").returncode, 1)

    def test_calibrate_then_analyze_with_table(self):
        nulls = self.root / "nulls"
        self.assertEqual(qsid("simulate", "--out", nulls, "--exams", 4, "--students", 300, "--questions", 80,
                              "--seed", 2).returncode, 0)
        table = self.root / "table.csv"
        cs = self.root / "null_cs_out.csv"
        r = qsid("calibrate", "--nulls", nulls, "--out", table, "--grid", "100,150", "--repeats", 100,
                 "--null-cs-out", cs)
        self.assertEqual(r.returncode, 0, r.stderr)
        lines = table.read_text().splitlines()
        self.assertTrue(lines[0].startswith("#anchors,"))
        self.assertEqual(lines[1], "class_size,c1,c2,c3,c4")
        self.assertEqual([l.split(",")[0] for l in lines[2:]], ["100", "150", ">250"])
        self.assertEqual(len(cs.read_text().splitlines()), 2 + 1200)
        out = self.root / "with_table"
        self.assertEqual(self.analyze(out, "--thresholds", table).returncode, 0)
        doc = json.loads((out / "results.json").read_text())
        self.assertEqual(doc["settings"]["threshold_source"], "table.csv")
        self.assertEqual(doc["settings"]["threshold_class_size"], 150)

    def test_combined_exams(self):
        r = qsid("analyze", "--input", self.exam, "--input", self.exam, "--out", self.root / "combined",
                 "--synthetic-students", 1000, "--format", "json")
        self.assertEqual(r.returncode, 0, r.stderr)
        doc = json.loads((self.root / "combined" / "results.json").read_text())
        self.assertEqual(doc["header"]["n_exams"], 2)
        self.assertEqual(doc["header"]["n_questions"], 100)
        self.assertEqual(len(doc["header"]["exam_complexities"]), 2)

    def test_complexity_command(self):
        r = qsid("complexity", "--input", self.exam)
        self.assertEqual(r.returncode, 0)
        self.assertTrue(r.stdout.startswith("complexity "))


if __name__ == "__main__":
    unittest.main()
