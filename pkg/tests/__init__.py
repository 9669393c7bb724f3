"""Tests for Oval Racer."""
