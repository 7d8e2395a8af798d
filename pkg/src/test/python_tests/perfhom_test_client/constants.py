# Licensed under the MIT License.
"""
Constants for use with tests.
"""
import pathlib

TEST_ROOT = pathlib.Path(__file__).parent.parent
PROJECT_ROOT = TEST_ROOT.parent.parent.parent
TEST_DATA = TEST_ROOT / "test_data"
TOOL_ROOT = PROJECT_ROOT / "bundled" / "tool"
CLI_SCRIPT = TOOL_ROOT / "perfhom_cli.py"

DISK_RADIUS = 0.25
DISK_AREA_FRACTION = 1.0 - 0.0625 * 3.141592653589793
LAMINATE_A11 = 1.6
LAMINATE_A22 = 2.5
