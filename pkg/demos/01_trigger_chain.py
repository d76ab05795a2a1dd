"""Grow a trigger chain, disclose a prefix, and watch a single flipped bit
break the links."""

import chainmarks as cm

shape = cm.InputShape.parse("3x16x16")
chain = cm.generate_chain(b"my secret seed", shape, 8)
print(f"{chain.length} blocks of {shape.byte_len} bytes ({shape})")
for b in chain.blocks[:3]:
    print(f"  B_{b.index}: {b.raw[:8].hex()}...")

# B_{i-1} = F(B_i), so anyone holding B_1..B_n can check the links but
# cannot run the chain forward to B_{n+1}
prefix = cm.disclose_prefix(chain, 4)
print("prefix B_1..B_4 verifies:", cm.verify_chain(prefix))

tampered = list(prefix)
raw = bytearray(tampered[2].raw)
raw[100] ^= 0x01
tampered[2] = cm.TriggerBlock(bytes(raw), 3)
print("after flipping one bit of B_3:", cm.verify_chain(tampered))

# blocks become model inputs byte by byte
x = cm.block_to_features(chain.blocks[0])
print(f"features in [{x.min():.3f}, {x.max():.3f}], first byte {chain.blocks[0].raw[0]} -> {x[0]:.4f}")
