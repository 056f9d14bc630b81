#pragma once

#include "airwayseg/backend.hpp"
#include "airwayseg/cascade.hpp"
#include "airwayseg/commands.hpp"
#include "airwayseg/components.hpp"
#include "airwayseg/config.hpp"
#include "airwayseg/error.hpp"
#include "airwayseg/grid.hpp"
#include "airwayseg/io.hpp"
#include "airwayseg/metrics.hpp"
#include "airwayseg/phantom.hpp"
#include "airwayseg/protocol.hpp"
#include "airwayseg/region_grow.hpp"
#include "airwayseg/transform.hpp"
