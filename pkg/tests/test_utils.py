"""Tests for consensusnav.utils."""

import io
import logging
from unittest.mock import patch

from consensusnav.utils import EpisodeProgress, format_duration, format_rate, setup_logging, stable_seed


class TestStableSeed:
    def test_repeatable(self):
        assert stable_seed("suite", 0, 3) == stable_seed("suite", 0, 3)

    def test_parts_matter(self):
        assert stable_seed("suite", 0, 3) != stable_seed("suite", 0, 4)
        assert stable_seed("a", 1) != stable_seed("b", 1)

    def test_range(self):
        s = stable_seed("x")
        assert 0 <= s < 2 ** 64


class TestFormatting:
    def test_rate(self):
        assert format_rate(0.354) == "35.4%"
        assert format_rate(1.0) == "100.0%"

    def test_duration(self):
        assert format_duration(250) == "250 ms"
        assert format_duration(1500) == "1.5 s"
        assert format_duration(125000) == "2m05.0s"


class TestSetupLogging:
    def test_verbose_mode(self):
        setup_logging(verbose=True)
        assert logging.getLogger().level == logging.DEBUG

    def test_normal_mode(self):
        setup_logging(verbose=False)
        assert logging.getLogger().level == logging.INFO


class TestEpisodeProgress:
    @patch("consensusnav.utils.HAS_TQDM", False)
    def test_fallback_progress(self):
        with patch("sys.stderr", new_callable=io.StringIO) as mock_err:
            bar = EpisodeProgress(4, desc="game")
            for success in (1, 0, True, None):
                bar.record(success)
            bar.close()
        output = mock_err.getvalue()
        assert "100% (4/4)" in output
        assert (bar.n, bar.successes, bar.failed) == (4, 2, 1)

    @patch("consensusnav.utils.HAS_TQDM", False)
    def test_success_rate_skips_aborted(self):
        with patch("sys.stderr", new_callable=io.StringIO):
            bar = EpisodeProgress(3)
            assert bar.success_rate == 0.0
            bar.record(None)
            bar.record(1)
            bar.record(0)
        assert bar.success_rate == 0.5

    @patch("consensusnav.utils.HAS_TQDM", False)
    def test_context_manager(self):
        with patch("sys.stderr", new_callable=io.StringIO) as mock_err:
            with EpisodeProgress(2, desc="ctx") as b:
                b.record(1)
                b.record(1)
        assert "SR 100.0%" in mock_err.getvalue()
        assert mock_err.getvalue().endswith("\n")
