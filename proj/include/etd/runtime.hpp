#pragma once

namespace etd {

// Keeps large tensor buffers on the heap instead of fresh mmap regions, which
// otherwise page-fault on every training step. No-op outside glibc.
void tune_allocator() noexcept;

}  // namespace etd
