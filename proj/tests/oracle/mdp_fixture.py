"""Independent reference for the random-MDP generator and key derivation.

Prints the kernel, rewards and key test vectors that tests/test_envs.cpp and
tests/test_rng_io.cpp freeze. Re-run after any deliberate change to the
generator's draw order.
"""

M = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
    return z ^ (z >> 31)


def fnv1a64(s):
    h = 0xCBF29CE484222325
    for c in s.encode():
        h = ((h ^ c) * 0x100000001B3) & M
    return h


def derive_key(seed, tag, idx=()):
    h = mix64(fnv1a64(tag) ^ seed)
    for x in idx:
        h = mix64(h ^ mix64((x + 1) & M))
    return h


class Stream:
    def __init__(self, key):
        self.key, self.n = key, 0

    def bits(self):
        self.n += 1
        return mix64((self.key + self.n * GOLDEN) & M)

    def uniform(self):
        return (self.bits() >> 11) * 2.0**-53


def random_mdp(seed, S, A, r_max=1.0):
    rng = Stream(seed)
    kernel = []
    for _ in range(S * A):
        row = [rng.uniform() for _ in range(S)]
        total = 0.0
        for x in row:
            total += x
        kernel.extend(x / total for x in row)
    rewards = [r_max * rng.uniform() for _ in range(S * A)]
    return kernel, rewards


if __name__ == "__main__":
    k, r = random_mdp(7, 2, 2)
    print("kernel", [repr(x) for x in k])
    print("rewards", [repr(x) for x in r])
    print("first_bits_key0", hex(Stream(0).bits()))
    print("derive_key(42,'kernel',[3])", hex(derive_key(42, "kernel", [3])))
    print("derive_key(0,'base')", hex(derive_key(0, "base")))
    print("fnv1a64('kernel')", hex(fnv1a64("kernel")))
