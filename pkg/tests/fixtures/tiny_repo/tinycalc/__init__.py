"""A very small calculator, just enough to have something to test."""

import requests  # noqa: F401  (exercises the dependency install path)


def add(a, b):
    return a + b


def scale(values, factor):
    return [v * factor for v in values]
