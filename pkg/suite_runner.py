"""
Script-style test runner
=========================
Each test_*.py module can be run directly: `python test_render.py`.
"""

import sys
import time
import traceback


def run_suite(title, tests):
    """Run test callables, print one ✅/❌ line each; returns True when all pass"""
    print("=" * 60)
    print(f"🧪 {title}")
    print("=" * 60)

    failed = 0
    started = time.time()
    for test in tests:
        t0 = time.time()
        try:
            test()
            print(f"✅ {test.__name__} ({time.time() - t0:.2f}s)")
        except Exception as e:
            failed += 1
            print(f"❌ {test.__name__}: {type(e).__name__}: {e}")
            print(traceback.format_exc())

    print("-" * 60)
    if failed:
        print(f"❌ {failed}/{len(tests)} failed in {time.time() - started:.1f}s")
    else:
        print(f"✅ All {len(tests)} tests passed in {time.time() - started:.1f}s")
    return failed == 0


def collect(module_globals):
    """All test_* functions of a module, in definition order"""
    return [fn for name, fn in module_globals.items() if name.startswith('test_') and callable(fn)]


def main_for(title, module_globals):
    ok = run_suite(title, collect(module_globals))
    sys.exit(0 if ok else 1)
