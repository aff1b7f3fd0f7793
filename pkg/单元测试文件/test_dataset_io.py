"""
数据集读写、mu 文件、配置与链表格的单元测试
"""
import os
import sys
import json
import tempfile

import numpy as np
import pytest
from numpy.testing import assert_allclose

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from core.chain import McmcChain
from core.dataset import Dataset, parse_dataset, write_dataset
from core.cli_io import read_mu_csv, prepare_outputs
from core.utils import (
    DEFAULT_CONFIG,
    load_config,
    save_config,
    deep_merge,
    resolve_threads,
    validate_output_path,
    cell_key_words,
    format_time,
)


@pytest.fixture
def temp_dir():
    with tempfile.TemporaryDirectory() as directory:
        yield directory


def write_text(directory, name, text):
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


class TestParseDataset:
    """测试数据集解析"""

    def test_three_rows(self, temp_dir):
        path = write_text(temp_dir, "d.csv", "y,x1,x2\n1.0,0.1,0.2\n2.0,0.3,0.4\n3.0,0.5,0.6\n")
        data = parse_dataset(path)
        assert data.n == 3 and data.p == 2
        assert data.columns == ["x1", "x2"]
        assert_allclose(data.y, [1.0, 2.0, 3.0])

    def test_y_not_first_column(self, temp_dir):
        path = write_text(temp_dir, "d.csv", "x1,y\n0.5,1\n0.7,2\n")
        data = parse_dataset(path)
        assert data.columns == ["x1"]
        assert_allclose(data.X[:, 0], [0.5, 0.7])

    def test_trailing_blank_line(self, temp_dir):
        path = write_text(temp_dir, "d.csv", "y,x1\n1,2\n3,4\n\n")
        assert parse_dataset(path).n == 2

    def test_missing_target(self, temp_dir):
        path = write_text(temp_dir, "d.csv", "x1,x2\n1,2\n")
        with pytest.raises(ValueError, match="target column 'y' not found"):
            parse_dataset(path)

    def test_empty_file(self, temp_dir):
        path = write_text(temp_dir, "d.csv", "")
        with pytest.raises(ValueError):
            parse_dataset(path)

    def test_non_numeric_reports_line(self, temp_dir):
        path = write_text(temp_dir, "d.csv", "y,x1\n1,2\n3,abc\n")
        with pytest.raises(ValueError, match="3"):
            parse_dataset(path)

    def test_nan_cell_named(self, temp_dir):
        path = write_text(temp_dir, "d.csv", "y,x1\n1,2\n3,nan\n")
        with pytest.raises(ValueError, match="x1"):
            parse_dataset(path)

    def test_inf_cell_named(self, temp_dir):
        path = write_text(temp_dir, "d.csv", "y,x1\ninf,2\n")
        with pytest.raises(ValueError, match="'y'"):
            parse_dataset(path)

    def test_missing_file(self, temp_dir):
        with pytest.raises(FileNotFoundError):
            parse_dataset(os.path.join(temp_dir, "none.csv"))

    def test_write_then_parse(self, temp_dir):
        rng = np.random.default_rng(0)
        data = Dataset(rng.standard_normal((5, 2)), rng.standard_normal(5), ["a", "b"])
        path = os.path.join(temp_dir, "out", "d.csv")
        write_dataset(data, path)
        parsed = parse_dataset(path)
        assert parsed.columns == ["a", "b"]
        assert_allclose(parsed.X, data.X, rtol=1e-15)
        assert_allclose(parsed.y, data.y, rtol=1e-15)


class TestDataset:
    """测试数据集对象"""

    def test_with_intercept(self):
        data = Dataset(np.arange(6.0).reshape(3, 2), np.zeros(3))
        augmented = data.with_intercept()
        assert augmented.columns == ["intercept", "x1", "x2"]
        assert_allclose(augmented.X[:, 0], 1.0)
        assert augmented.with_intercept() is augmented

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(4))


class TestReadMuCsv:
    """测试 mu 文件读取"""

    def test_single_column(self, temp_dir):
        path = write_text(temp_dir, "mu.csv", "mu\n1.5\n2.5\n3.5\n")
        mu = read_mu_csv(path)
        assert mu.shape == (1, 3)
        assert_allclose(mu[0], [1.5, 2.5, 3.5])

    def test_wide_draws_sorted_numerically(self, temp_dir):
        header = "draw," + ",".join(f"mu_{i}" for i in [1, 2, 10, 3, 4, 5, 6, 7, 8, 9])
        row = "1," + ",".join(str(float(i)) for i in [1, 2, 10, 3, 4, 5, 6, 7, 8, 9])
        path = write_text(temp_dir, "mu.csv", header + "\n" + row + "\n" + row + "\n")
        mu = read_mu_csv(path)
        assert mu.shape == (2, 10)
        assert_allclose(mu[0], np.arange(1.0, 11.0))

    def test_missing_columns(self, temp_dir):
        path = write_text(temp_dir, "mu.csv", "value\n1\n")
        with pytest.raises(ValueError):
            read_mu_csv(path)

    def test_non_finite(self, temp_dir):
        path = write_text(temp_dir, "mu.csv", "mu\n1\nabc\n")
        with pytest.raises(ValueError):
            read_mu_csv(path)


class TestConfig:
    """测试配置加载与优先级"""

    def test_defaults(self):
        config = load_config(None)
        assert config == DEFAULT_CONFIG
        config["gp"]["alpha"] = 0.5
        assert DEFAULT_CONFIG["gp"]["alpha"] == 1.0

    def test_user_config_overrides(self, temp_dir):
        path = write_text(temp_dir, "cfg.json", json.dumps({"gp": {"alpha": 0.5}, "master_seed": 7}))
        config = load_config(path)
        assert config["gp"]["alpha"] == 0.5
        assert config["gp"]["noise_sd"] == 1.0
        assert config["master_seed"] == 7

    def test_invalid_json(self, temp_dir):
        path = write_text(temp_dir, "cfg.json", "{not json")
        with pytest.raises(ValueError):
            load_config(path)

    def test_missing_file(self, temp_dir):
        with pytest.raises(FileNotFoundError):
            load_config(os.path.join(temp_dir, "missing.json"))

    def test_deep_merge(self):
        merged = deep_merge({"a": {"b": 1, "c": 2}}, {"a": {"c": 3}, "d": 4})
        assert merged == {"a": {"b": 1, "c": 3}, "d": 4}

    def test_save_numpy_values(self, temp_dir):
        path = os.path.join(temp_dir, "m.json")
        assert save_config(path, {"x": np.float64(1.5), "v": np.arange(3), "n": np.int64(2)})
        with open(path, encoding="utf-8") as f:
            assert json.load(f) == {"x": 1.5, "v": [0, 1, 2], "n": 2}

    def test_threads_priority(self, monkeypatch):
        """测试线程数：命令行 > 环境变量 > 配置文件"""
        monkeypatch.setenv("DEMEXP_THREADS", "3")
        assert resolve_threads(5, 2) == 5
        assert resolve_threads(None, 2) == 3
        monkeypatch.delenv("DEMEXP_THREADS")
        assert resolve_threads(None, 2) == 2
        assert resolve_threads(None, None) == 1

    def test_threads_invalid(self, monkeypatch):
        monkeypatch.setenv("DEMEXP_THREADS", "many")
        with pytest.raises(ValueError):
            resolve_threads(None)
        with pytest.raises(ValueError):
            resolve_threads(0)


class TestOutputs:
    """测试输出路径检查"""

    def test_existing_file_needs_force(self, temp_dir):
        path = write_text(temp_dir, "chain.csv", "draw\n")
        valid, message = validate_output_path(path, overwrite=False)
        assert not valid and "--force" in message
        assert validate_output_path(path, overwrite=True) == (True, None)

    def test_prepare_outputs(self, temp_dir):
        write_text(temp_dir, "chain.csv", "draw\n")
        with pytest.raises(FileExistsError):
            prepare_outputs(temp_dir, ["chain.csv"], force=False)
        paths = prepare_outputs(os.path.join(temp_dir, "new"), ["a.csv", "b.csv"], force=False)
        assert paths == [os.path.join(temp_dir, "new", "a.csv"), os.path.join(temp_dir, "new", "b.csv")]


class TestUtils:
    """测试杂项工具"""

    def test_cell_key_words(self):
        high, low = cell_key_words("bvm|gp|se")
        assert (high, low) == cell_key_words("bvm|gp|se")
        assert 0 <= high < 2 ** 32 and 0 <= low < 2 ** 32
        assert (high, low) != cell_key_words("bvm|gp|laplace")

    def test_format_time(self):
        assert format_time(65) == "1:05"
        assert format_time(3725) == "1:02:05"
        assert format_time(-1) == "00:00"


class TestChainFrame:
    """测试链的表格输出"""

    def test_columns(self):
        chain = McmcChain(beta=np.ones((3, 2)),
                          scalars={"sigma": np.array([1.0, 2.0, 3.0]), "all_empty": np.array([True, False, True])})
        frame = chain.to_frame(["sigma", "all_empty"], beta_names=["intercept", "x1"])
        assert list(frame.columns) == ["draw", "beta_intercept", "beta_x1", "sigma", "all_empty"]
        assert list(frame["draw"]) == [1, 2, 3]
        assert list(frame["all_empty"]) == [1, 0, 1]

    def test_name_mismatch(self):
        with pytest.raises(ValueError):
            McmcChain(beta=np.ones((2, 2))).to_frame(beta_names=["a"])

    def test_mu_frame(self):
        chain = McmcChain(beta=np.zeros((2, 1)), mu_draws=np.arange(6.0).reshape(2, 3))
        frame = chain.mu_frame()
        assert list(frame.columns) == ["draw", "mu_1", "mu_2", "mu_3"]
        with pytest.raises(ValueError):
            McmcChain(beta=np.zeros((2, 1))).mu_frame()
