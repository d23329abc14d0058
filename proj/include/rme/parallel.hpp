// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace rme {

/// Worker count: RME_THREADS when set and positive, else hardware threads.
int configured_threads();

/// Runs fn(0..n-1) across up to `threads` workers. Each index must write only
/// its own output slot; the first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int threads = configured_threads());

}  // namespace rme
