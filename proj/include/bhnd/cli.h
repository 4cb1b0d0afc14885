#pragma once

namespace bhnd {

/// Entry point of the `bhnd` tool. Exit codes: 0 success, 1 usage error,
/// 2 runtime failure.
int cli_dispatch(int argc, char** argv);

}  // namespace bhnd
