"""Walk through the ground-truth side: one room, a few microphone distances.

Reverberation time is a property of the room, so it should barely move as
the microphone walks away from the talker.  The direct-to-reverberant ratio
is a property of the source-microphone pair and should fall with distance.

    python demos/room_acoustics.py
"""

import numpy as np

from nira.rir import RoomSpec, compute_drr_from_rir, estimate_t60_from_rir, schroeder_edc, simulate_rir

DIMS = (7.0, 5.0, 3.0)
SOURCE = (1.5, 2.5, 1.6)


def main():
    print(f"room {DIMS} m, source at {SOURCE}")
    print(f"{'distance':>9} {'T60 [s]':>8} {'DRR [dB]':>9}")
    for d in (0.5, 1.0, 2.0, 4.0):
        room = RoomSpec(DIMS, (0.25,) * 6, SOURCE, (SOURCE[0] + d, 2.5, 1.6), seed=1)
        rec = simulate_rir(room)
        t60 = estimate_t60_from_rir(rec.rir, rec.sample_rate)
        drr = compute_drr_from_rir(rec.rir, rec.direct_index, rec.sample_rate)
        print(f"{d:>8.1f}m {t60:>8.3f} {drr:>9.2f}")

    # the decay curve the T60 fit is read from
    edc = schroeder_edc(rec.rir)
    for level in (-5, -15, -25, -35):
        idx = int(np.argmax(edc <= level))
        print(f"EDC crosses {level:>4} dB at {1000 * idx / rec.sample_rate:6.1f} ms")

    print("\nmore absorption, shorter decay:")
    for alpha in (0.1, 0.2, 0.4, 0.7):
        rec = simulate_rir(RoomSpec(DIMS, (alpha,) * 6, SOURCE, (4.0, 2.5, 1.6), seed=1))
        print(f"  absorption {alpha:.1f}: T60 {estimate_t60_from_rir(rec.rir, rec.sample_rate):.3f} s")


if __name__ == "__main__":
    main()
