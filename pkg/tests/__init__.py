# -*- coding: utf-8 -*-

"""Unit test package for momentpic."""
from pathlib import Path

BASE_PATH = Path(__file__).parent.absolute()
RESOURCE_PATH = BASE_PATH / "resources"
