import numpy as np
import pytest
from hypothesis import settings

from hemtfit.surrogate import DCParams, SmallSignalParams

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

TRUE_DC = DCParams(VOFF=-1.5, NFACTOR=1.4, KGAIN=0.35, UA=0.15, UB=0.05, DELTA=3.0, LAMBDA=0.03,
                   RSC=0.8, RDC=1.2)
TRUE_RF = SmallSignalParams(gm=0.1, tau=2e-12, gds=5e-3, Cgs=0.5e-12, Cgd=0.05e-12, Cds=0.1e-12, Ri=2.0,
                            RG=1.0, RD=1.0, RS=0.5, LG=1e-10, LD=1e-10, LS=2e-11, CPG=5e-14, CPD=5e-14)
VGS_GRID = np.linspace(-1.2, 0.0, 5)
VDS_GRID = np.linspace(0.0, 10.0, 40)
FREQS = np.linspace(1e9, 10e9, 10)


@pytest.fixture
def true_dc():
    return TRUE_DC


@pytest.fixture
def true_rf():
    return TRUE_RF
