#pragma once

namespace tica {

/// Keeps large tensor buffers on the heap instead of fresh mappings so that
/// repeated forward/backward passes do not page-fault on every allocation.
/// Process-wide; intended to be called once from main(). No-op outside glibc.
void tune_allocator() noexcept;

}  // namespace tica
