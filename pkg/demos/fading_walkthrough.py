"""Generate UMa fading traces at pedestrian and vehicular speed and check them.

Prints the Doppler frequency for each speed, the gridded power delay profile,
and the measured autocorrelation of the strongest tap next to J0(2 pi f_d tau).

    python3 demos/fading_walkthrough.py --duration 60 --seed 1
"""
import argparse

import numpy as np

from tinytwin.chan_model import DEFAULT_SAMPLE_RATE, DelayGrid
from tinytwin.trace_gen import build_3gpp_trace, doppler_from_speed, gridded_pdp, load_profile, min_bins_for


def bessel_j0(x):
    # numpy has no J0; the midpoint rule on (1/pi) * int_0^pi cos(x sin t) dt is plenty for a printout
    theta = (np.arange(2000) + 0.5) * np.pi / 2000
    return np.mean(np.cos(np.multiply.outer(x, np.sin(theta))), axis=-1)


def autocorr(g, lags):
    p = np.mean(np.abs(g) ** 2)
    return np.array([np.real(np.mean(g[k:] * np.conj(g[:-k]))) / p for k in lags])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--speeds", default="5,60", help="km/h, comma separated")
    ap.add_argument("--duration", type=float, default=60.0, help="seconds of trace")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    lags = np.array([1, 2, 5, 10, 20])
    for speed in (float(s) for s in args.speeds.split(",")):
        fd = doppler_from_speed(speed)
        pdp = load_profile("uma", fd)
        grid = DelayGrid(min_bins_for(pdp.path_delays, DEFAULT_SAMPLE_RATE), DEFAULT_SAMPLE_RATE)
        trace = build_3gpp_trace(pdp, grid, args.duration, args.seed)
        taps = np.asarray(trace.taps, dtype=complex)

        print(f"\n{speed:g} km/h -> f_d = {fd:.1f} Hz, {trace.num_steps} steps x {trace.num_bins} bins")
        expected = gridded_pdp(pdp, grid)
        measured = np.mean(np.abs(taps) ** 2, axis=0)
        print(" bin  expected dB  measured dB")
        for b in range(trace.num_bins):
            print(f" {b:3d}  {10 * np.log10(expected[b]):10.2f}  {10 * np.log10(measured[b]):11.2f}")

        strongest = int(np.argmax(expected))
        g = taps[:, strongest] / np.sqrt(expected[strongest])
        r = autocorr(g, lags)
        ref = bessel_j0(2 * np.pi * fd * lags * trace.time_step)
        print(" lag ms  autocorr  J0")
        for k, a, b in zip(lags, r, ref):
            print(f" {k:6d}  {a:8.3f}  {b:6.3f}")


if __name__ == "__main__":
    main()
