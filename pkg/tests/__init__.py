# Tests for molcom-demod
