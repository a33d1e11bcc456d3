# -*- coding: utf-8 -*-

"""Top-level package for momentpic."""

__author__ = """momentpic developers"""
__version__ = "0.1.0"
