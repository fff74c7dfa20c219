"""Figure rendering for warm-start HPO report bundles.

Pure presentation: every number drawn comes verbatim from the bundle files
(adtm.csv, cd.json); no statistics are recomputed here.
"""

__version__ = "0.1.0"
