import csv
import io
import json
import math
import time

import numpy as np
import pytest

from starode.cli import main


def write(tmp_path, doc, name="problem.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return str(path)


def rows(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.reader(io.StringIO("\n".join(lines))))


EXP = {"n": 1, "a": [["1"]]}


def test_solve_exponential(tmp_path, capsys):
    assert main(["solve", "--input", write(tmp_path, EXP)]) == 0
    table = rows(capsys.readouterr().out)
    assert table[0] == ["t", "U_0_0", "oracle_0_0", "abs_err"]
    assert len(table) == 12
    for r in table[1:]:
        t, u = float(r[0]), float(r[1])
        assert abs(u - math.exp(t)) <= 1e-9
        assert float(r[3]) <= 1e-9


def test_solve_no_oracle_and_grid(tmp_path, capsys):
    assert main(["solve", "--input", write(tmp_path, EXP), "--no-oracle", "--grid", "0,0.5,1", "--m", "30"]) == 0
    table = rows(capsys.readouterr().out)
    assert table[0] == ["t", "U_0_0"]
    assert [r[0] for r in table[1:]] == ["0", "0.5", "1"]


def test_solve_matrix_problem_with_output_file(tmp_path):
    doc = {"n": 2, "a": [["0", "1"], ["-(1+t^2)", "0"]], "m": 60}
    out = tmp_path / "out.csv"
    assert main(["solve", "--input", write(tmp_path, doc), "--output", str(out), "--neumann"]) == 0
    table = rows(out.read_text())
    assert table[0][:5] == ["t", "U_0_0", "U_0_1", "U_1_0", "U_1_1"]
    assert max(float(r[-1]) for r in table[1:]) <= 1e-6


def test_solve_is_deterministic(tmp_path):
    path = write(tmp_path, {"n": 2, "a": [["t", "1"], ["0", "cos(t)"]], "b": [["1", "0"], ["0", "t"]]})
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}.csv"
        assert main(["solve", "--input", path, "--output", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize(
    "argv_tail,doc",
    [
        ([], '{"n": 1, "a": [["1", "2"]]}'),
        ([], "{not json"),
        ([], '{"n": 1, "a": [["sin(t"]]}'),
        (["--grid", "0.5,0.1"], EXP),
        (["--grid", "a,b"], EXP),
        (["--m", "1"], EXP),
    ],
)
def test_solve_input_errors(tmp_path, capsys, argv_tail, doc):
    assert main(["solve", "--input", write(tmp_path, doc)] + argv_tail) == 2
    assert "error" in capsys.readouterr().err


def test_missing_input_and_bad_output(tmp_path, capsys):
    assert main(["solve"]) == 2
    assert main(["solve", "--input", str(tmp_path / "nope.json")]) == 2
    assert main(["solve", "--input", write(tmp_path, EXP), "--output", str(tmp_path / "x" / "y.csv")]) == 2


def test_argparse_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_numeric_failure_exit_code(tmp_path, capsys):
    assert main(["solve", "--input", write(tmp_path, {"n": 1, "a": [["log(t-2)"]]}), "--no-oracle"]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_convergence(tmp_path, capsys):
    assert main(["convergence", "--input", write(tmp_path, EXP), "--m-list", "8,16,24"]) == 0
    table = rows(capsys.readouterr().out)
    assert table[0] == ["M", "max_error", "solve_seconds"]
    errs = [float(r[1]) for r in table[1:]]
    assert [r[0] for r in table[1:]] == ["8", "16", "24"]
    assert errs[0] > errs[1] > errs[2]
    assert all(float(r[2]) >= 0 for r in table[1:])


@pytest.mark.parametrize("m_list", [None, "16,8", "1,4", "x"])
def test_convergence_bad_m_list(tmp_path, m_list):
    argv = ["convergence", "--input", write(tmp_path, EXP)]
    if m_list is not None:
        argv += ["--m-list", m_list]
    assert main(argv) == 2


def _matrix(text):
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return np.array([[float(x) for x in ln.split(",")] for ln in body])


def test_kernel_theta(capsys):
    assert main(["kernel", "--kind", "theta", "--m", "5"]) == 0
    text = capsys.readouterr().out
    F = _matrix(text)
    assert F.shape == (5, 5)
    assert F[0, 0] == 0.5
    assert F[1, 0] == pytest.approx(1 / (2 * math.sqrt(3)), abs=1e-15)
    assert "# decay unavailable" in text


def test_kernel_pk_band(capsys):
    assert main(["kernel", "--kind", "pk(2)", "--m", "8"]) == 0
    F = _matrix(capsys.readouterr().out)
    k, l = np.indices(F.shape)
    assert np.abs(F[np.abs(k - l) > 3]).max() <= 1e-12
    assert np.abs(F[np.abs(k - l) == 3]).max() > 1e-3


def test_kernel_from_expr_decay(capsys):
    assert main(["kernel", "--kind", "from-expr(exp(t))", "--m", "30"]) == 0
    footer = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("# decay")][0]
    rho = float(footer.split("rho=")[1])
    assert 0 < rho < 1


@pytest.mark.parametrize("kind,code", [("gamma", 2), ("from-expr(t+)", 2), ("from-expr(log(t-2))", 3)])
def test_kernel_errors(kind, code):
    assert main(["kernel", "--kind", kind, "--m", "6"]) == code


def test_verify_quick(capsys):
    start = time.perf_counter()
    assert main(["verify", "--level", "quick"]) == 0
    assert time.perf_counter() - start < 10
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert out.strip().splitlines()[-1].endswith("checks passed")
