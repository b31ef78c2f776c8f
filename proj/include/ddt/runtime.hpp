#pragma once

namespace ddt {

// Keeps large freed blocks in the heap instead of returning them to the OS.
// Training allocates and frees megabyte-sized node buffers every step, and
// without this each one pays for fresh page faults. Call once from main().
void tune_allocator();

}  // namespace ddt
