#pragma once

#include "ecsvc/bytes.hpp"
#include "ecsvc/crypto.hpp"
#include "ecsvc/group.hpp"
#include "ecsvc/abe.hpp"
#include "ecsvc/wire.hpp"
#include "ecsvc/protocol.hpp"
#include "ecsvc/canfd.hpp"
#include "ecsvc/sim.hpp"
#include "ecsvc/config.hpp"
#include "ecsvc/harness.hpp"
