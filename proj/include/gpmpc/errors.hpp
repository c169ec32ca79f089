/*
 * Copyright 2026 The gpmpc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef GPMPC_ERRORS_HPP
#define GPMPC_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace gpmpc {

/// Caller passed an argument outside an operation's precondition.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Factorization or integration broke down (non-PD matrix, NaN rollout).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Hyperparameter optimization failed on every restart.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent logged/serialized data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace gpmpc

#endif // GPMPC_ERRORS_HPP
