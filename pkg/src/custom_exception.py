import sys

class CustomException(Exception):
    exit_code = 1

    def __init__(self, message: str, error_detail: Exception = None):
        self.message = message
        self.error_message = self.get_detailed_error_message(message, error_detail)
        super().__init__(self.error_message)

    @staticmethod
    def get_detailed_error_message(message, error_detail):
        """Format the error message with traceback details."""
        _, _, exc_tb = sys.exc_info()
        if exc_tb is None:
            return f"{message}" if error_detail is None else f"{message} | Error: {error_detail}"
        file_name = exc_tb.tb_frame.f_code.co_filename
        line_number = exc_tb.tb_lineno
        return f"{message} | Error: {error_detail} | File: {file_name} | Line: {line_number}"

    def __str__(self):
        return self.error_message


# Exit code 1: bad configuration, schema violations, tables over the storage threshold.
class ConfigError(CustomException):
    exit_code = 1


class SchemaError(ConfigError):
    pass


class TableTooLargeError(ConfigError):
    pass


# Exit code 2
class BudgetExceededError(CustomException):
    exit_code = 2


# Exit code 3
class DataIOError(CustomException):
    exit_code = 3


# Internal invariant broken (e.g. a tree that was not padded to uniform depth).
class ConsistencyError(CustomException):
    exit_code = 1
