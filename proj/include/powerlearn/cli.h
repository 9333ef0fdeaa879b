// Copyright 2026 The PowerLearn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// The `powerlearn` command line.

#ifndef POWERLEARN_CLI_H_
#define POWERLEARN_CLI_H_

namespace powerlearn {

// Parses arguments, runs one subcommand and returns the process exit code.
int RunCli(int argc, char** argv);

}  // namespace powerlearn

#endif  // POWERLEARN_CLI_H_
