#pragma once

// Everything in one include. The TOML loader and checkpoint I/O pull in the
// vendored toml++ and nlohmann/json headers; include the pieces separately
// to avoid them.

#include "cfisac/common.hpp"
#include "cfisac/scenario.hpp"
#include "cfisac/channel.hpp"
#include "cfisac/metrics.hpp"
#include "cfisac/crlb.hpp"
#include "cfisac/manifold.hpp"
#include "cfisac/nn.hpp"
#include "cfisac/td3.hpp"
#include "cfisac/env.hpp"
#include "cfisac/metarl.hpp"
#include "cfisac/harness.hpp"
#include "cfisac/checkpoint.hpp"
#include "cfisac/config_toml.hpp"
