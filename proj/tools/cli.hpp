/* Copyright 2026 The tinyplan Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef TINYPLAN_TOOLS_CLI_HPP_
#define TINYPLAN_TOOLS_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace tinyplan::cli {

// 0 success, 1 domain infeasibility, 2 usage error, 3 I/O error.
enum ExitCode : int { kOk = 0, kInfeasible = 1, kUsage = 2, kIo = 3 };

/// Runs one command. stdout text is buffered and files are written only
/// after the command succeeds, so failing commands leave nothing behind.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tinyplan::cli

#endif  // TINYPLAN_TOOLS_CLI_HPP_
