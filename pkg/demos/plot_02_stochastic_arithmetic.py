"""
Monte Carlo arithmetic and significant bits
===========================================

Random rounding perturbs each result by a relative amount of about
``2**-t``.  Running a computation several times and looking at the spread
tells how many bits of the answer are trustworthy.
"""

import numpy as np

from mixprec.mca import McaConfig, McaMode, NoiseStream, mca_op_array, significant_bits, summarize

# A sum that cancels badly: 1 + tiny - 1.
tiny = np.full(1, 2.0**-30)
cfg = McaConfig(McaMode.RR, t=23)

samples = []
for run in range(20):
    stream = NoiseStream(seed=0, instance=run)
    s = mca_op_array(np.ones(1), tiny, "+", cfg, stream)
    samples.append(float(mca_op_array(s, np.ones(1), "-", cfg, stream)[0]))

# At t = 23 the tiny term is below the noise floor: the spread exceeds the
# mean, so the significant-bit estimate is negative (nothing survives).
print(summarize(samples))

# Without cancellation the same precision keeps about 23 bits.
well_conditioned = [float(mca_op_array(np.ones(1), tiny, "+", cfg, NoiseStream(0, r))[0]) for r in range(20)]
print(round(significant_bits(well_conditioned), 1))
