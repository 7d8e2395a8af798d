# Licensed under the MIT License.
"""Tests for the perfhom tool modules."""
import pathlib
import sys

_TOOL = pathlib.Path(__file__).parent.parent.parent.parent / "bundled" / "tool"
if str(_TOOL) not in sys.path:
    sys.path.insert(0, str(_TOOL))
