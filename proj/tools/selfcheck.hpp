#pragma once

// Built-in oracle/invariant checks behind `rom selfcheck`.
// Returns 0 when every check passes, 2 otherwise.
int run_selfcheck();
