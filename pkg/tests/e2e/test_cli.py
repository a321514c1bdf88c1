"""
End-to-end tests for the sinkgp command line
Runs every subcommand through main() and checks outputs and exit codes
"""

import json

import pytest

import main
from utils import formats


def run(capsys, *argv):
    """Run the CLI; return (exit code, stdout summary or None, last stderr JSON line or None)."""
    code = main.main([str(arg) for arg in argv])
    captured = capsys.readouterr()
    out_lines = captured.out.strip().splitlines()
    err_lines = [line for line in captured.err.strip().splitlines() if line.startswith('{')]
    summary = json.loads(out_lines[-1]) if out_lines else None
    error = json.loads(err_lines[-1]) if err_lines else None
    return code, summary, error


@pytest.fixture
def toy_manifest(tmp_path, capsys):
    code, summary, _ = run(capsys, 'toygen', '--count', 8, '--cloud-size', 10, '--seed', 3,
                           '--out', tmp_path / 'toy')
    assert code == 0
    return summary['manifest']


@pytest.fixture
def fitted_model(tmp_path, capsys, toy_manifest):
    code, summary, _ = run(capsys, 'fit', toy_manifest, '--ref-size', 3, '--max-iters', 2,
                           '--eps', 0.1, '--noise', 1e-3, '--out', tmp_path / 'model.json')
    assert code == 0
    return summary


class TestToygen:
    """Test synthetic dataset generation."""

    def test_regression(self, tmp_path, capsys):
        """Test that the manifest lists every cloud with a target."""
        code, summary, _ = run(capsys, 'toygen', '--count', 5, '--cloud-size', 7, '--out', tmp_path / 'toy')
        assert code == 0
        assert summary['count'] == 5
        document = formats.read_json(summary['manifest'], formats.MANIFEST_FORMAT)
        assert len(document['items']) == 5
        assert all('target' in item for item in document['items'])

    def test_classification(self, tmp_path, capsys):
        """Test that the two-class task writes labels."""
        code, summary, _ = run(capsys, 'toygen', '--task', 'classification', '--count', 6,
                               '--cloud-size', 5, '--out', tmp_path / 'mix')
        assert code == 0
        document = formats.read_json(summary['manifest'], formats.MANIFEST_FORMAT)
        assert sorted(item['label'] for item in document['items']) == [0, 0, 0, 1, 1, 1]

    def test_seeded(self, tmp_path, capsys):
        """Test that one seed writes identical files."""
        run(capsys, 'toygen', '--count', 3, '--cloud-size', 4, '--seed', 5, '--out', tmp_path / 'a')
        run(capsys, 'toygen', '--count', 3, '--cloud-size', 4, '--seed', 5, '--out', tmp_path / 'b')
        for name in ('manifest.json', 'toy-0000.csv', 'toy-0002.csv'):
            assert (tmp_path / 'a' / name).read_text() == (tmp_path / 'b' / name).read_text()


class TestEmbed:
    """Test the embed command."""

    def test_writes_embeddings(self, tmp_path, capsys, toy_manifest):
        """Test one row per measure and the reference version in the summary."""
        out = tmp_path / 'emb.csv'
        code, summary, _ = run(capsys, 'embed', toy_manifest, '--ref-size', 4, '--eps', 0.1, '--out', out)
        assert code == 0
        assert summary['count'] == summary['converged'] == 8
        assert len(summary['ref_version']) == 16
        rows = formats.read_table(out)
        assert len(rows) == 8
        assert list(rows[0]) == ['id', 'g_1', 'g_2', 'g_3', 'g_4', 'converged']

    def test_grid_reference(self, tmp_path, capsys, toy_manifest):
        """Test a fixed grid reference."""
        code, _, _ = run(capsys, 'embed', toy_manifest, '--grid', 3, '--eps', 0.1, '--out', tmp_path / 'e.csv')
        assert code == 0
        assert len(formats.read_table(tmp_path / 'e.csv')[0]) == 1 + 9 + 1

    def test_empty_manifest(self, tmp_path, capsys):
        """Test that an empty manifest succeeds with no rows."""
        path = formats.write_json(tmp_path / 'empty.json', formats.MANIFEST_FORMAT, {'items': []})
        code, summary, _ = run(capsys, 'embed', path, '--out', tmp_path / 'e.csv')
        assert code == 0
        assert summary['count'] == 0

    def test_strict_non_convergence(self, tmp_path, capsys, toy_manifest):
        """Test that --strict turns stalled solves into exit code 4."""
        code, _, error = run(capsys, 'embed', toy_manifest, '--eps', 0.01, '--max-iter', 1, '--strict',
                             '--out', tmp_path / 'e.csv')
        assert code == 4
        assert error['error'] == 'convergence'
        assert error['details']['indices'] == list(range(8))

    def test_without_strict(self, tmp_path, capsys, toy_manifest):
        """Test that stalled solves are only flagged without --strict."""
        code, summary, _ = run(capsys, 'embed', toy_manifest, '--eps', 0.01, '--max-iter', 1,
                               '--out', tmp_path / 'e.csv')
        assert code == 0
        assert summary['converged'] == 0

    def test_numeric_failure(self, tmp_path, capsys, toy_manifest):
        """Test that overflowing iterates exit with code 3."""
        code, _, error = run(capsys, 'embed', toy_manifest, '--eps', 5e-324, '--out', tmp_path / 'e.csv')
        assert code == 3
        assert error['exit_code'] == 3


class TestFitPredict:
    """Test training and prediction through the command line."""

    def test_fit_outputs(self, fitted_model):
        """Test the model file, the trace and the summary."""
        assert fitted_model['kind'] == 'regression'
        assert fitted_model['q'] == 3
        assert fitted_model['nll'] <= fitted_model['initial_nll']
        formats.read_json(fitted_model['model'], formats.MODEL_FORMAT)
        trace = formats.read_jsonl(fitted_model['trace'], formats.TRACE_FORMAT)
        assert len(trace) == fitted_model['iterations'] + 1

    def test_predict(self, tmp_path, capsys, fitted_model, toy_manifest):
        """Test predictions with an explained variance on the training manifest."""
        out = tmp_path / 'pred.csv'
        code, summary, _ = run(capsys, 'predict', fitted_model['model'], toy_manifest, '--out', out)
        assert code == 0
        assert summary['count'] == 8
        assert summary['evs'] > 0.5
        rows = formats.read_table(out)
        assert list(rows[0]) == ['id', 'mean', 'variance']
        assert all(float(row['variance']) >= 0 for row in rows)

    def test_classification(self, tmp_path, capsys):
        """Test fit and predict on a labeled manifest."""
        _, generated, _ = run(capsys, 'toygen', '--task', 'classification', '--count', 10,
                              '--cloud-size', 8, '--out', tmp_path / 'mix')
        code, fitted, _ = run(capsys, 'fit', generated['manifest'], '--ref-size', 3, '--max-iters', 1,
                              '--eps', 0.1, '--out', tmp_path / 'clf.json')
        assert code == 0
        assert fitted['kind'] == 'classification'
        code, summary, _ = run(capsys, 'predict', fitted['model'], generated['manifest'],
                               '--out', tmp_path / 'pred.csv')
        assert code == 0
        assert 0.0 <= summary['accuracy'] <= 1.0
        header = list(formats.read_table(tmp_path / 'pred.csv')[0])
        assert header == ['id', 'latent_mean', 'latent_variance', 'probability']

    def test_fit_needs_responses(self, tmp_path, capsys, write_csv):
        """Test that a manifest without targets or labels is rejected."""
        write_csv('a.csv', "x1,x2,weight\n0,0,1\n")
        path = formats.write_json(tmp_path / 'm.json', formats.MANIFEST_FORMAT, {'items': [{'path': 'a.csv'}]})
        code, _, error = run(capsys, 'fit', path, '--out', tmp_path / 'model.json')
        assert code == 2
        assert error['error'] == 'validation'

    def test_normalized_fit(self, tmp_path, capsys, toy_manifest):
        """Test that --normalize stores the map with the model."""
        code, summary, _ = run(capsys, 'fit', toy_manifest, '--normalize', '--ref-size', 3, '--max-iters', 1,
                               '--eps', 0.1, '--noise', 1e-3, '--out', tmp_path / 'model.json')
        assert code == 0
        document = formats.read_json(summary['model'], formats.MODEL_FORMAT)
        assert set(document['normalization']) == {'shift', 'scale'}


class TestGram:
    """Test Gram matrix export."""

    def test_sinkhorn_kernel(self, tmp_path, capsys, toy_manifest):
        """Test the embedding kernel matrix and its sidecar."""
        out = tmp_path / 'gram.csv'
        code, summary, _ = run(capsys, 'gram', toy_manifest, '--ref-size', 3, '--eps', 0.1,
                               '--lengthscale', 0.1, '--out', out)
        assert code == 0
        assert summary['n'] == 8
        assert summary['kernel'] == 'sinkhorn'
        sidecar = formats.read_json(summary['sidecar'], formats.GRAM_FORMAT)
        assert len(sidecar['ids']) == 8
        assert sidecar['spec']['family'] == 'sqexp'
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 8
        assert all(len(line.split(',')) == 8 for line in lines)

    def test_mmd_kernel(self, tmp_path, capsys, toy_manifest):
        """Test the MMD baseline matrix."""
        code, summary, _ = run(capsys, 'gram', toy_manifest, '--kernel', 'mmd', '--out', tmp_path / 'mmd.csv')
        assert code == 0
        assert summary['kernel'] == 'mmd'
        assert summary['min_eig'] > -1e-8 * 8

    def test_mmd_only_for_gram(self, tmp_path, capsys, toy_manifest):
        """Test that other commands refuse the MMD kernel."""
        code, _, error = run(capsys, 'embed', toy_manifest, '--kernel', 'mmd', '--out', tmp_path / 'e.csv')
        assert code == 2
        assert 'gram' in error['message']


class TestBenchmark:
    """Test the benchmark command."""

    def test_small_grid(self, tmp_path, capsys):
        """Test one row per reference size plus the MMD row."""
        out = tmp_path / 'bench.csv'
        code, summary, _ = run(capsys, 'benchmark', '--size', '3,4', '--repeats', 1, '--eps', 0.1, '--out', out)
        assert code == 0
        assert summary['rows'] == 3
        assert [row['method'] for row in formats.read_table(out)] == ['sinkhorn', 'sinkhorn', 'mmd']


class TestErrors:
    """Test error reporting and exit codes."""

    def test_missing_manifest(self, tmp_path, capsys):
        """Test that an unreadable input exits with code 2."""
        code, _, error = run(capsys, 'embed', tmp_path / 'nope.json')
        assert code == 2
        assert error['exit_code'] == 2

    def test_invalid_parameter(self, tmp_path, capsys, toy_manifest):
        """Test that a nonpositive epsilon is rejected before any work."""
        code, _, error = run(capsys, 'embed', toy_manifest, '--eps', 0, '--out', tmp_path / 'e.csv')
        assert code == 2
        assert error['error'] == 'validation'

    def test_broken_items(self, tmp_path, capsys, write_csv):
        """Test that every broken manifest item is reported."""
        write_csv('good.csv', "x1,x2,weight\n0,0,1\n")
        write_csv('bad.csv', "x1,x2,weight\n0,zero,1\n")
        path = formats.write_json(tmp_path / 'm.json', formats.MANIFEST_FORMAT, {
            'items': [{'path': 'bad.csv'}, {'path': 'good.csv'}, {'path': 'missing.csv'}]})
        code, _, error = run(capsys, 'embed', path, '--out', tmp_path / 'e.csv')
        assert code == 2
        assert error['error'] == 'batch'
        assert error['details']['indices'] == [0, 2]

    def test_unknown_flag(self, capsys):
        """Test that argparse rejects unknown flags."""
        with pytest.raises(SystemExit) as excinfo:
            main.main(['embed', 'm.json', '--bogus'])
        assert excinfo.value.code == 2

    def test_unknown_config(self, capsys, toy_manifest):
        """Test that an unknown configuration name is a validation error."""
        code, _, error = run(capsys, '--config', 'staging', 'embed', toy_manifest)
        assert code == 2
        assert 'staging' in error['message']

    def test_json_logs(self, tmp_path, capsys, toy_manifest):
        """Test that --log-json writes structured records to stderr."""
        main.main(['embed', toy_manifest, '--eps', '0.1', '--log-level', 'INFO', '--log-json',
                   '--out', str(tmp_path / 'e.csv')])
        records = [json.loads(line) for line in capsys.readouterr().err.strip().splitlines()]
        assert any(record['message'] == 'sinkgp embed started' for record in records)
        assert all('levelname' in record for record in records)
